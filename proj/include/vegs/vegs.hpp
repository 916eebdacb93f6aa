#pragma once

#include "vegs/core/error.hpp"
#include "vegs/core/image.hpp"
#include "vegs/core/math.hpp"
#include "vegs/eval/crop.hpp"
#include "vegs/eval/evaluate.hpp"
#include "vegs/eval/metrics.hpp"
#include "vegs/io/binary.hpp"
#include "vegs/io/checkpoint.hpp"
#include "vegs/io/png.hpp"
#include "vegs/lidar/bundle.hpp"
#include "vegs/lidar/ingest.hpp"
#include "vegs/loss/box.hpp"
#include "vegs/loss/covariance.hpp"
#include "vegs/loss/photometric.hpp"
#include "vegs/loss/score.hpp"
#include "vegs/loss/score_protocol.hpp"
#include "vegs/render/output_io.hpp"
#include "vegs/render/rasterizer.hpp"
#include "vegs/render/slerp.hpp"
#include "vegs/scene/bounding_box.hpp"
#include "vegs/scene/camera.hpp"
#include "vegs/scene/covariance.hpp"
#include "vegs/scene/gaussian_set.hpp"
#include "vegs/scene/rigid_transform.hpp"
#include "vegs/scene/scene_graph.hpp"
#include "vegs/scene/sh.hpp"
#include "vegs/train/config.hpp"
#include "vegs/train/densify.hpp"
#include "vegs/train/evs_cameras.hpp"
#include "vegs/train/optimizer.hpp"
#include "vegs/train/trainer.hpp"
