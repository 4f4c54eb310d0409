#pragma once

#include "snbv/errors.hpp"
#include "snbv/experiment.hpp"
#include "snbv/gaussian_map.hpp"
#include "snbv/geometry.hpp"
#include "snbv/harness.hpp"
#include "snbv/image.hpp"
#include "snbv/io.hpp"
#include "snbv/losses.hpp"
#include "snbv/nbv.hpp"
#include "snbv/renderer.hpp"
#include "snbv/sh.hpp"
#include "snbv/splat.hpp"
#include "snbv/training.hpp"
#include "snbv/uncertainty.hpp"
