#pragma once

#include "aftsel/types.hpp"
#include "aftsel/loss.hpp"
#include "aftsel/weighted_median.hpp"
#include "aftsel/km.hpp"
#include "aftsel/augment.hpp"
#include "aftsel/solver.hpp"
#include "aftsel/em.hpp"
#include "aftsel/model_selection.hpp"
#include "aftsel/rng.hpp"
#include "aftsel/simulate.hpp"
#include "aftsel/study.hpp"
#include "aftsel/csv.hpp"
