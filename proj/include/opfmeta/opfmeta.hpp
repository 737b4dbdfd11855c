#pragma once

#include "opfmeta/config.hpp"
#include "opfmeta/dataset.hpp"
#include "opfmeta/dc_model.hpp"
#include "opfmeta/errors.hpp"
#include "opfmeta/experiments.hpp"
#include "opfmeta/feasibility.hpp"
#include "opfmeta/grid.hpp"
#include "opfmeta/kkt_check.hpp"
#include "opfmeta/loss.hpp"
#include "opfmeta/meta_train.hpp"
#include "opfmeta/mlp.hpp"
#include "opfmeta/mlp_io.hpp"
#include "opfmeta/parallel.hpp"
#include "opfmeta/pso.hpp"
#include "opfmeta/qp.hpp"
#include "opfmeta/qp_ipm.hpp"
#include "opfmeta/records.hpp"
#include "opfmeta/rng.hpp"
#include "opfmeta/scenario.hpp"
#include "opfmeta/train.hpp"
