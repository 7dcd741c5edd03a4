#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>

#include "json.hpp"
#include "utopy/core/rng.hpp"
#include "utopy/core/tensor_io.hpp"
#include "utopy/operators/hadamard.hpp"

namespace utopy {

/// Images [N, 1, side, side] with values in [0, 1].
struct Dataset {
    Tensor<float> images;
    std::string split = "train"; // train | test | all
    std::string provenance;      // "dir:<path>" or "synthetic:<seed>"
    std::vector<std::string> warnings;

    std::size_t size() const { return images.rank() ? images.dim(0) : 0; }
    std::size_t side() const { return images.rank() ? images.dim(3) : 0; }
};

/// Grayscale raster in [0, 1], row-major.
struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<double> pixels;
};

namespace detail {

inline std::string pnm_token(std::istream& is) {
    std::string tok;
    char c;
    while (is.get(c)) {
        if (c == '#') {
            std::string skip;
            std::getline(is, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

inline std::size_t pnm_number(std::istream& is, const std::string& what) {
    const std::string tok = pnm_token(is);
    UTOPY_REQUIRE(!tok.empty() && std::all_of(tok.begin(), tok.end(), ::isdigit), "pnm: bad " + what + " '" + tok + "'");
    return static_cast<std::size_t>(std::stoull(tok));
}

} // namespace detail

/// Reads binary PGM (P5) or PPM (P6) with maxval <= 255. Colour is reduced
/// with luminance weights 0.299 / 0.587 / 0.114.
inline GrayImage read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw MissingPrerequisite("cannot open image " + path.string());
    const std::string magic = detail::pnm_token(is);
    UTOPY_REQUIRE(magic == "P5" || magic == "P6", "pnm: unsupported format '" + magic + "' in " + path.string());
    GrayImage img;
    img.width = detail::pnm_number(is, "width");
    img.height = detail::pnm_number(is, "height");
    const std::size_t maxval = detail::pnm_number(is, "maxval");
    UTOPY_REQUIRE(img.width > 0 && img.height > 0, "pnm: empty image " + path.string());
    UTOPY_REQUIRE(maxval >= 1 && maxval <= 255, "pnm: only 8-bit images are supported");
    const std::size_t ch = magic == "P6" ? 3 : 1, n = img.width * img.height;
    std::vector<unsigned char> raw(n * ch);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    UTOPY_REQUIRE(static_cast<std::size_t>(is.gcount()) == raw.size(), "pnm: truncated pixel data in " + path.string());
    img.pixels.resize(n);
    const double mv = static_cast<double>(maxval);
    for (std::size_t i = 0; i < n; ++i) {
        double v = ch == 1 ? raw[i] : 0.299 * raw[3 * i] + 0.587 * raw[3 * i + 1] + 0.114 * raw[3 * i + 2];
        img.pixels[i] = std::clamp(v / mv, 0.0, 1.0);
    }
    return img;
}

inline void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const float> pixels) {
    UTOPY_REQUIRE(pixels.size() == width * height, "write_pgm: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw MissingPrerequisite("cannot write " + path.string());
    os << "P5\n" << width << ' ' << height << "\n255\n";
    for (float v : pixels) os.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
}

/// Bilinear resampling with pixel-centre alignment.
inline std::vector<double> resize_bilinear(const GrayImage& img, std::size_t side) {
    std::vector<double> out(side * side);
    const double sy = static_cast<double>(img.height) / static_cast<double>(side);
    const double sx = static_cast<double>(img.width) / static_cast<double>(side);
    auto src = [&](std::size_t y, std::size_t x) { return img.pixels[y * img.width + x]; };
    auto coord = [](double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
        c = std::clamp(c, 0.0, static_cast<double>(n - 1));
        i0 = static_cast<std::size_t>(std::floor(c));
        i1 = std::min(i0 + 1, n - 1);
        f = c - static_cast<double>(i0);
    };
    for (std::size_t y = 0; y < side; ++y) {
        std::size_t y0, y1;
        double fy;
        coord((static_cast<double>(y) + 0.5) * sy - 0.5, img.height, y0, y1, fy);
        for (std::size_t x = 0; x < side; ++x) {
            std::size_t x0, x1;
            double fx;
            coord((static_cast<double>(x) + 0.5) * sx - 0.5, img.width, x0, x1, fx);
            // a + f (b - a) returns a exactly when a == b.
            const double top = src(y0, x0) + fx * (src(y0, x1) - src(y0, x0));
            const double bot = src(y1, x0) + fx * (src(y1, x1) - src(y1, x0));
            out[y * side + x] = std::clamp(top + fy * (bot - top), 0.0, 1.0);
        }
    }
    return out;
}

struct DatasetSplit {
    Dataset train, test;
    std::size_t skipped = 0;
};

inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw MissingPrerequisite("dataset directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

/// Loads every PGM/PPM in `dir`, resizes to side x side, then splits by a
/// seeded shuffle: the first round(train_fraction * N) go to train.
inline DatasetSplit load_dataset(const std::filesystem::path& dir, std::size_t side, double train_fraction,
                                 std::uint64_t seed) {
    UTOPY_REQUIRE(is_power_of_two(side), "load_dataset: side must be a power of two");
    UTOPY_REQUIRE(train_fraction >= 0.0 && train_fraction <= 1.0, "load_dataset: train fraction must lie in [0, 1]");
    DatasetSplit out;
    std::vector<std::vector<double>> imgs;
    std::vector<std::string> warnings;
    for (const auto& f : list_images(dir)) {
        try {
            imgs.push_back(resize_bilinear(read_pnm(f), side));
        } catch (const std::exception& e) {
            ++out.skipped;
            warnings.push_back("skipped " + f.filename().string() + ": " + e.what());
        }
    }
    if (imgs.empty()) throw MissingPrerequisite("no readable images in " + dir.string());
    Rng rng(seed, 0x73706c6974);
    const auto order = rng.permutation(imgs.size());
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(imgs.size())));
    auto fill = [&](Dataset& d, std::size_t begin, std::size_t end, const char* split) {
        d.images = Tensor<float>({end - begin, 1, side, side});
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t j = 0; j < side * side; ++j)
                d.images[(i - begin) * side * side + j] = static_cast<float>(imgs[order[i]][j]);
        d.split = split;
        d.provenance = "dir:" + dir.string();
        d.warnings = warnings;
    };
    fill(out.train, 0, n_train, "train");
    fill(out.test, n_train, imgs.size(), "test");
    return out;
}

/// Piecewise-smooth synthetic images: a shaded background, a few ellipses
/// and rectangles with linear shading, and mild sinusoidal texture.
inline Dataset synth_dataset(std::size_t count, std::size_t side, std::uint64_t seed, std::string split = "all") {
    UTOPY_REQUIRE(count >= 1, "synth_dataset: count must be >= 1");
    UTOPY_REQUIRE(is_power_of_two(side) && side >= 4, "synth_dataset: side must be a power of two >= 4");
    Dataset d;
    d.images = Tensor<float>({count, 1, side, side});
    d.split = std::move(split);
    d.provenance = "synthetic:" + std::to_string(seed);
    const Rng root(seed, 0x73796e7468);
    const double s = static_cast<double>(side);
    for (std::size_t i = 0; i < count; ++i) {
        Rng r = root.split(i);
        std::vector<double> img(side * side);
        const double b0 = r.uniform(0.2, 0.6), bx = r.uniform(-0.2, 0.2), by = r.uniform(-0.2, 0.2);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x)
                img[y * side + x] = b0 + bx * (static_cast<double>(x) / s - 0.5) + by * (static_cast<double>(y) / s - 0.5);
        const std::size_t shapes = 2 + r.below(4);
        for (std::size_t k = 0; k < shapes; ++k) {
            const bool ellipse = r.uniform() < 0.6;
            const double cx = r.uniform(0.15, 0.85) * s, cy = r.uniform(0.15, 0.85) * s;
            const double ax = r.uniform(0.08, 0.3) * s, ay = r.uniform(0.08, 0.3) * s;
            const double th = r.uniform(0.0, std::numbers::pi);
            const double level = r.uniform(0.05, 0.95), gx = r.uniform(-0.3, 0.3), gy = r.uniform(-0.3, 0.3);
            const double ct = std::cos(th), st = std::sin(th);
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x) {
                    const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
                    const double u = (ct * dx + st * dy) / ax, v = (-st * dx + ct * dy) / ay;
                    const bool inside = ellipse ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
                    if (inside) img[y * side + x] = level + 0.25 * (gx * u + gy * v);
                }
        }
        const double amp = r.uniform(0.0, 0.03), fx = r.uniform(0.5, 3.0), fy = r.uniform(0.5, 3.0);
        const double ph = r.uniform(0.0, 2 * std::numbers::pi);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                const double t = amp * std::sin(2 * std::numbers::pi * (fx * static_cast<double>(x) + fy * static_cast<double>(y)) / s + ph);
                d.images[i * side * side + y * side + x] = static_cast<float>(std::clamp(img[y * side + x] + t, 0.0, 1.0));
            }
    }
    return d;
}

/// Splits a dataset: the first n_train images become train, the rest test.
inline DatasetSplit split_dataset(const Dataset& all, std::size_t n_train) {
    UTOPY_REQUIRE(n_train <= all.size(), "split_dataset: n_train exceeds dataset size");
    DatasetSplit out;
    out.train.images = slice_batch(all.images, 0, n_train);
    out.test.images = slice_batch(all.images, n_train, all.size());
    out.train.split = "train";
    out.test.split = "test";
    out.train.provenance = out.test.provenance = all.provenance;
    return out;
}

/// Cache: <stem>.utns holds the image tensor, <stem>.json the sidecar.
inline void save_dataset(const std::filesystem::path& stem, const Dataset& d, std::uint64_t seed) {
    auto t = stem;
    t += ".utns";
    save_tensor(t, d.images);
    auto j = stem;
    j += ".json";
    std::ofstream os(j);
    if (!os) throw MissingPrerequisite("cannot write " + j.string());
    os << nlohmann::json{{"count", d.size()}, {"side", d.side()}, {"split", d.split}, {"seed", seed}, {"source", d.provenance}}
              .dump(2)
       << '\n';
}

inline Dataset load_dataset_cache(const std::filesystem::path& stem) {
    auto t = stem;
    t += ".utns";
    auto j = stem;
    j += ".json";
    std::ifstream is(j);
    if (!is) throw MissingPrerequisite("dataset sidecar not found: " + j.string());
    nlohmann::json meta;
    try {
        is >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation("dataset sidecar: " + std::string(e.what()));
    }
    Dataset d;
    d.images = load_tensor<float>(t);
    UTOPY_REQUIRE(d.images.rank() == 4 && d.images.dim(1) == 1, "dataset cache: expected [N, 1, s, s]");
    UTOPY_REQUIRE(meta.value("count", std::size_t{0}) == d.size(), "dataset cache: count does not match sidecar");
    d.split = meta.value("split", std::string("all"));
    d.provenance = meta.value("source", std::string());
    return d;
}

} // namespace utopy
