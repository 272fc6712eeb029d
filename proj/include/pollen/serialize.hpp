#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pollen {

// Tagged binary container shared by the detector ("PLNW") and the
// authentication model ("PLNA"). Layout, little-endian throughout:
//
//   magic        4 bytes
//   version      u32
//   record count u32
//   records:     kind u32, extent count u32, extents u32[],
//                buffer count u32, per buffer: length u32 + f32[]
//   checksum     u32  (CRC-32 of every byte between the header and itself)
//
// Readers fail with the byte offset of the first inconsistency.

struct Record {
    uint32_t kind = 0;
    std::vector<uint32_t> extents;
    std::vector<std::vector<float>> buffers;
};

inline constexpr uint32_t kContainerVersion = 1;

// Atomically writes the container (temp file + rename).
void write_container(const std::string& path, const char magic[4],
                     const std::vector<Record>& records);

std::vector<Record> read_container(const std::string& path, const char magic[4]);

// Atomic text/bytes write used by every artifact-producing path.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace pollen
