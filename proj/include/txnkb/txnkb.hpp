#pragma once

// Umbrella header: transaction histories in, graded behavioral knowledge
// base out, prompt contexts and evaluation on top.

#include "txnkb/common.hpp"
#include "txnkb/context.hpp"
#include "txnkb/essence.hpp"
#include "txnkb/eval.hpp"
#include "txnkb/gateway.hpp"
#include "txnkb/gateway_http.hpp"
#include "txnkb/ingest.hpp"
#include "txnkb/instruct.hpp"
#include "txnkb/kb.hpp"
#include "txnkb/pattern.hpp"
#include "txnkb/rules.hpp"
#include "txnkb/scorecard.hpp"
#include "txnkb/synthetic.hpp"
#include "txnkb/woe.hpp"
