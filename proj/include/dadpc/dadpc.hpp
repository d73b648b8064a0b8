#pragma once

#include "dadpc/certificates.hpp"
#include "dadpc/closed_loop.hpp"
#include "dadpc/config.hpp"
#include "dadpc/conformal.hpp"
#include "dadpc/csv.hpp"
#include "dadpc/errors.hpp"
#include "dadpc/experiments.hpp"
#include "dadpc/plant.hpp"
#include "dadpc/predictor.hpp"
#include "dadpc/qpsolve.hpp"
#include "dadpc/rbdpc.hpp"
#include "dadpc/schedule.hpp"
#include "dadpc/supervisor.hpp"
#include "dadpc/trajdata.hpp"
