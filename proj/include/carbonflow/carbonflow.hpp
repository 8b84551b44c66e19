#pragma once

#include "carbonflow/errors.hpp"
#include "carbonflow/grid.hpp"
#include "carbonflow/power_flow.hpp"
#include "carbonflow/lp.hpp"
#include "carbonflow/carbon_flow.hpp"
#include "carbonflow/copf.hpp"
#include "carbonflow/consequential.hpp"
#include "carbonflow/accounting.hpp"
#include "carbonflow/storage.hpp"
#include "carbonflow/io.hpp"
