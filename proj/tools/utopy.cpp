// utopy: command-line front end. Exit codes: 0 ok, 1 other failure,
// 2 config error, 3 numeric failure, 4 missing prerequisite.

#include <cstdlib>
#include <iostream>
#include <optional>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "CLI11.hpp"
#include "utopy/app/commands.hpp"

namespace {

using namespace utopy;
using namespace utopy::app;

struct Flags {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> scheduler;
    std::optional<double> eta;
    std::optional<double> sigma_t;
    bool desk = false;
    bool quiet = false;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "experiment JSON, or a manifest.json from an earlier run");
    cmd->add_option("--out", f.out, "output root (UTOPY_OUT overrides)");
    cmd->add_option("--seed", f.seed, "experiment seed");
    cmd->add_option("--workers", f.workers, "training threads; 1 is deterministic across machines")->check(CLI::PositiveNumber);
    cmd->add_option("--scheduler", f.scheduler, "exp, linear or baseline");
    cmd->add_option("--eta", f.eta, "extra CS rows in the synthetic operator, as a fraction of n");
    cmd->add_option("--sigma-t", f.sigma_t, "synthetic blur width");
    cmd->add_flag("--desk-scale", f.desk, "start from the desk-scale preset");
    cmd->add_flag("--quiet", f.quiet, "no per-epoch progress on stderr");
}

ExperimentConfig resolve(const Flags& f) {
    ExperimentConfig c = f.desk ? desk_preset() : default_config();
    if (!f.config.empty()) {
        json j = read_json_file(f.config);
        if (j.is_object() && j.contains("command") && j.contains("config")) j = j["config"];
        merge(c, j);
    }
    if (f.seed) c.seed = *f.seed;
    if (f.workers) c.workers = *f.workers;
    if (f.scheduler) {
        try {
            c.train.scheduler.kind = parse_scheduler(*f.scheduler);
        } catch (const std::exception& e) {
            throw ContractViolation(std::string("--scheduler: ") + e.what());
        }
    }
    if (f.eta) {
        c.op.eta = *f.eta;
        c.verify.eta = *f.eta;
    }
    if (f.sigma_t) c.op.sigma_t = *f.sigma_t;
    c.validate();
    return c;
}

int fail(const std::string& command, const char* kind, const std::string& message, int code) {
    std::cerr << json{{"error", {{"command", command}, {"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump()
              << '\n';
    return code;
}

} // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Activation buffers are reused every step; keep them on the heap instead of mmap/munmap per tensor.
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
    CLI::App app{"Homotopy-fidelity training of unrolled reconstruction networks"};
    app.require_subcommand(1);
    Flags flags;
    struct Command {
        const char* name;
        const char* help;
        json (*run)(const Context&);
    };
    const Command commands[] = {
        {"make-operators", "build target and synthetic operator descriptors", cmd_make_operators},
        {"simulate", "stage images and simulate noisy measurements", cmd_simulate},
        {"train", "train an unrolled model on staged measurements", cmd_train},
        {"eval", "evaluate a trained model across operator and SNR settings", cmd_eval},
        {"verify", "trace the fixed-point path of a contractive iteration", cmd_verify},
        {"plot-data", "collect run logs into plot-ready CSV files", cmd_plot_data},
    };
    for (const auto& c : commands) add_flags(app.add_subcommand(c.name, c.help), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        return fail("", "config", e.what(), 2);
    }

    const Command* chosen = nullptr;
    for (const auto& c : commands)
        if (app.got_subcommand(c.name)) chosen = &c;
    const std::string name = chosen->name;
    try {
        Context ctx;
        ctx.command = name;
        ctx.config = resolve(flags);
        ctx.config_path = flags.config;
        const char* env_out = std::getenv("UTOPY_OUT");
        ctx.out = env_out && *env_out ? env_out : flags.out;
        if (flags.quiet) ctx.progress = nullptr;
        const json m = chosen->run(ctx);
        std::cout << json{{"status", "ok"}, {"command", name}, {"outputs", m["outputs"]}}.dump() << '\n';
        return 0;
    } catch (const ContractViolation& e) {
        return fail(name, "config", e.what(), 2);
    } catch (const NumericFailure& e) {
        return fail(name, "numeric", e.what(), 3);
    } catch (const ConvergenceFailure& e) {
        return fail(name, "numeric", e.what(), 3);
    } catch (const MissingPrerequisite& e) {
        return fail(name, "missing_prerequisite", e.what(), 4);
    } catch (const std::exception& e) {
        return fail(name, "internal", e.what(), 1);
    }
}
