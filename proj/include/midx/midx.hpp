#pragma once

#include "midx/alias.hpp"
#include "midx/bench.hpp"
#include "midx/common.hpp"
#include "midx/config.hpp"
#include "midx/dataset.hpp"
#include "midx/diagnostics.hpp"
#include "midx/kmeans.hpp"
#include "midx/model.hpp"
#include "midx/quantizer.hpp"
#include "midx/sampler.hpp"
#include "midx/trainer.hpp"
