#pragma once

#include "mifuse/classify.hpp"
#include "mifuse/csp.hpp"
#include "mifuse/dataset.hpp"
#include "mifuse/error.hpp"
#include "mifuse/evaluation.hpp"
#include "mifuse/fcm.hpp"
#include "mifuse/forest.hpp"
#include "mifuse/fusion.hpp"
#include "mifuse/preprocess.hpp"
#include "mifuse/seeding.hpp"
#include "mifuse/spd.hpp"
