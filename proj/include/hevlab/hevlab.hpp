#pragma once

#include "hevlab/action_grid.hpp"
#include "hevlab/bench.hpp"
#include "hevlab/config.hpp"
#include "hevlab/deep_rl.hpp"
#include "hevlab/errors.hpp"
#include "hevlab/experts.hpp"
#include "hevlab/mlp.hpp"
#include "hevlab/powertrain.hpp"
#include "hevlab/replay.hpp"
#include "hevlab/rewards.hpp"
#include "hevlab/rollout.hpp"
#include "hevlab/tabular.hpp"
