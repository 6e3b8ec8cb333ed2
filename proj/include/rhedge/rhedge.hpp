#pragma once

/// \file rhedge.hpp
/// Everything: tree, market, acceptance sets, primal and dual programs,
/// oracles, scenario files and the command-line surface.

#include "rhedge/lattice.hpp"
#include "rhedge/lp.hpp"
#include "rhedge/convex.hpp"
#include "rhedge/market.hpp"
#include "rhedge/acceptance.hpp"
#include "rhedge/primal.hpp"
#include "rhedge/dual.hpp"
#include "rhedge/oracle.hpp"
#include "rhedge/scenario_io.hpp"
#include "rhedge/cli.hpp"
