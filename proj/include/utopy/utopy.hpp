#pragma once

// Umbrella header: the whole library.

#include "utopy/version.hpp"
#include "utopy/core/autodiff.hpp"
#include "utopy/core/gradcheck.hpp"
#include "utopy/core/kernels.hpp"
#include "utopy/core/ops.hpp"
#include "utopy/core/power_iteration.hpp"
#include "utopy/core/rng.hpp"
#include "utopy/core/tensor.hpp"
#include "utopy/core/tensor_io.hpp"
#include "utopy/operators/descriptor.hpp"
#include "utopy/operators/designs.hpp"
#include "utopy/operators/fidelity.hpp"
#include "utopy/operators/hadamard.hpp"
#include "utopy/operators/linear_operator.hpp"
#include "utopy/prox/prox_net.hpp"
#include "utopy/solver/checkpoint.hpp"
#include "utopy/solver/fista.hpp"
#include "utopy/solver/unrolled.hpp"
#include "utopy/training/adam.hpp"
#include "utopy/training/loss.hpp"
#include "utopy/training/scheduler.hpp"
#include "utopy/training/train.hpp"
#include "utopy/theory/harness.hpp"
#include "utopy/data/dataset.hpp"
#include "utopy/data/metrics.hpp"
#include "utopy/data/noise.hpp"
#include "utopy/app/config.hpp"
#include "utopy/app/commands.hpp"
