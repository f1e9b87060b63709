#pragma once

#include "tiersplat/dynamics/state.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tiersplat::pipeline {

    inline constexpr std::uint32_t kSnapshotVersion = 1;

    /// Complete model after one frame: enough to resume streaming or render.
    struct Snapshot {
        dynamics::FrameState state;
        std::vector<CameraView> cameras;
        std::string held_out;
    };

    /// Little-endian binary ("GSNP", version, then every field in a fixed
    /// order). Optimizer moments are not stored.
    std::vector<std::uint8_t> encode_snapshot(const Snapshot& snap);
    /// Throws ParseError on a bad magic, version or truncated payload.
    Snapshot decode_snapshot(const std::vector<std::uint8_t>& bytes);

    /// Writes to a temporary sibling and renames it into place, so a reader
    /// never sees a partial file.
    void write_snapshot(const std::filesystem::path& path, const Snapshot& snap);
    Snapshot read_snapshot(const std::filesystem::path& path);

    /// "<dir>/fNNNN.gsnap"
    std::filesystem::path snapshot_path(const std::filesystem::path& dir, int frame);

} // namespace tiersplat::pipeline
