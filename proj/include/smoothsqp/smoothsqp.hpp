#pragma once

#include "smoothsqp/core.hpp"
#include "smoothsqp/problem.hpp"
#include "smoothsqp/lp.hpp"
#include "smoothsqp/qp.hpp"
#include "smoothsqp/sqp.hpp"
#include "smoothsqp/cq.hpp"
#include "smoothsqp/quadrature.hpp"
#include "smoothsqp/bilevel.hpp"
#include "smoothsqp/registry.hpp"
#include "smoothsqp/report.hpp"
