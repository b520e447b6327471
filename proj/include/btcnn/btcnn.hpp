#pragma once

#include "btcnn/checkpoint.hpp"
#include "btcnn/dataset.hpp"
#include "btcnn/error.hpp"
#include "btcnn/evaluation.hpp"
#include "btcnn/gradcheck.hpp"
#include "btcnn/layers.hpp"
#include "btcnn/model.hpp"
#include "btcnn/pgm.hpp"
#include "btcnn/preprocess.hpp"
#include "btcnn/rng.hpp"
#include "btcnn/synth.hpp"
#include "btcnn/tensor.hpp"
#include "btcnn/training.hpp"
