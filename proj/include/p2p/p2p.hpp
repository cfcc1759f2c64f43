#pragma once

// Everything, for tools and tests.

#include "p2p/autodiff.hpp"
#include "p2p/backbone/vit.hpp"
#include "p2p/coloring/coloring.hpp"
#include "p2p/data/augment.hpp"
#include "p2p/data/dataset.hpp"
#include "p2p/data/io.hpp"
#include "p2p/data/synthetic.hpp"
#include "p2p/errors.hpp"
#include "p2p/geometry/encoder.hpp"
#include "p2p/geometry/knn.hpp"
#include "p2p/geometry/point_cloud.hpp"
#include "p2p/heads/classify.hpp"
#include "p2p/heads/segment.hpp"
#include "p2p/nn/layers.hpp"
#include "p2p/nn/optim.hpp"
#include "p2p/nn/params.hpp"
#include "p2p/pipeline/checkpoint.hpp"
#include "p2p/pipeline/config.hpp"
#include "p2p/pipeline/evaluate.hpp"
#include "p2p/pipeline/model.hpp"
#include "p2p/pipeline/render.hpp"
#include "p2p/pipeline/train.hpp"
#include "p2p/projection/project.hpp"
#include "p2p/projection/rotation.hpp"
#include "p2p/util/rng.hpp"
