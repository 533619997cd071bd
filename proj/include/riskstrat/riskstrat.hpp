#pragma once

#include "riskstrat/common.hpp"
#include "riskstrat/ecg_trace.hpp"
#include "riskstrat/cohort.hpp"
#include "riskstrat/ingest.hpp"
#include "riskstrat/ecg.hpp"
#include "riskstrat/logistic.hpp"
#include "riskstrat/gbdt.hpp"
#include "riskstrat/model_io.hpp"
#include "riskstrat/metrics.hpp"
#include "riskstrat/select.hpp"
#include "riskstrat/eval.hpp"
#include "riskstrat/explain.hpp"
#include "riskstrat/experiment.hpp"
