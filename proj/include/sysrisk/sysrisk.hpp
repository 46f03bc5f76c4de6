#pragma once

#include "sysrisk/control.hpp"
#include "sysrisk/error.hpp"
#include "sysrisk/fluctuations.hpp"
#include "sysrisk/ldp.hpp"
#include "sysrisk/meanfield.hpp"
#include "sysrisk/model.hpp"
#include "sysrisk/path_grid.hpp"
#include "sysrisk/potential.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/sde.hpp"
#include "sysrisk/stats.hpp"
