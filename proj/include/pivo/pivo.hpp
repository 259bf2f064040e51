#pragma once

#include "pivo/augmentation.hpp"
#include "pivo/camera.hpp"
#include "pivo/dataset_io.hpp"
#include "pivo/errors.hpp"
#include "pivo/estimator.hpp"
#include "pivo/evaluation.hpp"
#include "pivo/filter_state.hpp"
#include "pivo/imu.hpp"
#include "pivo/quaternion.hpp"
#include "pivo/simulator.hpp"
#include "pivo/tracks.hpp"
#include "pivo/trajectory.hpp"
#include "pivo/triangulation.hpp"
#include "pivo/update_comparison.hpp"
#include "pivo/visual_update.hpp"
