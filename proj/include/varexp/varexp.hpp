#pragma once

#include "varexp/error.hpp"
#include "varexp/geometry.hpp"
#include "varexp/parallel.hpp"
#include "varexp/grid.hpp"
#include "varexp/record.hpp"
#include "varexp/exponent.hpp"
#include "varexp/varlp.hpp"
#include "varexp/dyadic.hpp"
#include "varexp/operator.hpp"
#include "varexp/solver.hpp"
#include "varexp/estimates.hpp"
#include "varexp/io.hpp"
#include "varexp/denoise.hpp"
#include "varexp/cli.hpp"
