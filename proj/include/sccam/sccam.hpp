#pragma once

// Umbrella header for the SCCAM fault-diagnosis toolkit: a pointwise-conv +
// CBAM encoder trained in two stages (supervised contrastive, then
// cross-entropy) over windowed multivariate series, with attention-map
// root-cause explanations.

#include "sccam/cbam.hpp"
#include "sccam/checkpoint.hpp"
#include "sccam/config.hpp"
#include "sccam/data.hpp"
#include "sccam/dataset.hpp"
#include "sccam/errors.hpp"
#include "sccam/explain.hpp"
#include "sccam/losses.hpp"
#include "sccam/model.hpp"
#include "sccam/pipeline.hpp"
#include "sccam/report.hpp"
#include "sccam/rng.hpp"
#include "sccam/tensor.hpp"
#include "sccam/train.hpp"
