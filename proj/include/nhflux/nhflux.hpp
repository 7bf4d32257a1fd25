#pragma once

// Everything: model, baths, both engines, flux analysis, fits, configs and runners.
#include "units.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "bath.hpp"
#include "propagators.hpp"
#include "influence.hpp"
#include "pathsum.hpp"
#include "tempo.hpp"
#include "flux.hpp"
#include "fit.hpp"
#include "config.hpp"
#include "io.hpp"
#include "runner.hpp"
#include "convergence.hpp"
