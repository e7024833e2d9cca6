#pragma once

#include "answer.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "grpo.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "policy.hpp"
#include "rng.hpp"
#include "runner.hpp"
#include "seq_policy.hpp"
#include "suites.hpp"
#include "tasks.hpp"
#include "voting.hpp"
