#pragma once

// Everything except the WebSocket server (teleop_server.hpp pulls in Boost).

#include "pathfollow/benchmark.hpp"
#include "pathfollow/box_qp.hpp"
#include "pathfollow/closed_loop.hpp"
#include "pathfollow/common.hpp"
#include "pathfollow/config.hpp"
#include "pathfollow/controllers.hpp"
#include "pathfollow/csv.hpp"
#include "pathfollow/error_model.hpp"
#include "pathfollow/imitation.hpp"
#include "pathfollow/mlp.hpp"
#include "pathfollow/parallel.hpp"
#include "pathfollow/paths.hpp"
#include "pathfollow/randomization.hpp"
#include "pathfollow/reference.hpp"
#include "pathfollow/teleop_session.hpp"
#include "pathfollow/vehicle.hpp"
#include "pathfollow/workbench.hpp"
