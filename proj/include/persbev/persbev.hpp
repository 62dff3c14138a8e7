#pragma once

// Perspective-BEV view transformation kernels: sampling-free lift/collapse,
// legacy grid-sampling and voxel-pooling oracles, detection target encoding
// and decoding, and a benchmark harness around them.

#include "persbev/decode.hpp"
#include "persbev/error.hpp"
#include "persbev/geometry.hpp"
#include "persbev/harness.hpp"
#include "persbev/lift.hpp"
#include "persbev/report.hpp"
#include "persbev/sampling.hpp"
#include "persbev/targets.hpp"
#include "persbev/tensor.hpp"
