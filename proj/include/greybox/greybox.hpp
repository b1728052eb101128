#pragma once

// Umbrella header: the whole toolkit in one include.

#include "greybox/advi.hpp"
#include "greybox/autodiff.hpp"
#include "greybox/density.hpp"
#include "greybox/diagnostics.hpp"
#include "greybox/errors.hpp"
#include "greybox/filtering.hpp"
#include "greybox/forecast.hpp"
#include "greybox/io.hpp"
#include "greybox/linalg.hpp"
#include "greybox/nuts.hpp"
#include "greybox/rng.hpp"
#include "greybox/samples.hpp"
#include "greybox/target.hpp"
#include "greybox/thermal_model.hpp"
