#pragma once

#include "sfada/classifier.hpp"
#include "sfada/dataset.hpp"
#include "sfada/distillation.hpp"
#include "sfada/errors.hpp"
#include "sfada/experiment.hpp"
#include "sfada/numerics.hpp"
#include "sfada/prompt_tuning.hpp"
#include "sfada/query.hpp"
#include "sfada/rng.hpp"
#include "sfada/surrogate.hpp"
