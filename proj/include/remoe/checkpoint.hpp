// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file: magic + format version + config as structured text,
// followed by named little-endian float64 parameter blobs and controller
// state. Round-trips bit-exactly.
#pragma once

#include <string>

#include "remoe/model.hpp"
#include "remoe/regularization.hpp"

namespace remoe {

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const SparsityController& ctrl, std::size_t step);

struct LoadedCheckpoint {
    ModelParams params;
    SparsityController ctrl;
    std::size_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace remoe
