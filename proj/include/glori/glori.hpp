#pragma once

#include "glori/autodiff.hpp"
#include "glori/binary_io.hpp"
#include "glori/checkpoint.hpp"
#include "glori/dataset.hpp"
#include "glori/error.hpp"
#include "glori/head.hpp"
#include "glori/metrics.hpp"
#include "glori/params.hpp"
#include "glori/report.hpp"
#include "glori/rng.hpp"
#include "glori/store.hpp"
#include "glori/survival.hpp"
#include "glori/tensor.hpp"
#include "glori/trainer.hpp"

namespace glori {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace glori
