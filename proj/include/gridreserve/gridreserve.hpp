#pragma once

// Umbrella header.

#include "gridreserve/common.hpp"
#include "gridreserve/conic.hpp"
#include "gridreserve/dispatch.hpp"
#include "gridreserve/dro.hpp"
#include "gridreserve/events.hpp"
#include "gridreserve/netmodel.hpp"
#include "gridreserve/overlay.hpp"
#include "gridreserve/powerflow.hpp"
#include "gridreserve/rng.hpp"
#include "gridreserve/robust.hpp"
#include "gridreserve/simharness.hpp"
#include "gridreserve/solver.hpp"
#include "gridreserve/stochastic.hpp"
