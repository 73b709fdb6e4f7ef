#pragma once

#include "adam.hpp"
#include "checkpoint.hpp"
#include "csv.hpp"
#include "error.hpp"
#include "esgraph.hpp"
#include "grad_check.hpp"
#include "ingest.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "random.hpp"
#include "tensor.hpp"
#include "timeutil.hpp"
#include "train.hpp"
#include "dataset_io.hpp"
