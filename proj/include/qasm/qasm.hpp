#pragma once

#include "qasm/agent_server.hpp"
#include "qasm/client_emulator.hpp"
#include "qasm/conntrack.hpp"
#include "qasm/load_balancer.hpp"
#include "qasm/nat.hpp"
#include "qasm/rate_limiter.hpp"
#include "qasm/tracking_agent.hpp"
#include "qasm/udp_agent_link.hpp"
#include "qasm/harness/csv.hpp"
#include "qasm/harness/scenarios.hpp"
