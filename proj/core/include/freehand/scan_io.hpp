#pragma once

#include "freehand/scan_sim.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace freehand {

/// Scan directory: poses.csv (absolute truth), frames.bin (FUS1) and
/// scan.txt (key=value metadata including `subject`).
void write_scan(const std::filesystem::path& dir, const ScanSequence& scan,
                const std::map<std::string, std::string>& extra_meta = {});
ScanSequence read_scan(const std::filesystem::path& dir);

void write_frames_bin(const std::filesystem::path& path, const ScanSequence& scan);
/// Fills geom, frame rate, frame count and frames.
void read_frames_bin(const std::filesystem::path& path, ScanSequence& scan);

}  // namespace freehand
