#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dastm/head.hpp"
#include "dastm/metrics.hpp"
#include "dastm/scenes.hpp"
#include "dastm/tensor.hpp"

// Text and image formats shared by the CLI:
//   NNNNNN.pgm       binary P5, 8-bit, value = round(255 * pixel)
//   groundtruth.txt  one "x,y,w,h" line per frame (predictions.txt likewise)
//   phases.txt       one phase label per line
//   gate_trace.csv   frame,phase,w_identity,w_se,w_ca,w_cbam,selected,flops

namespace dastm::io {

inline constexpr const char* kGateTraceHeader = "frame,phase,w_identity,w_se,w_ca,w_cbam,selected,flops";

void write_pgm(const std::filesystem::path& path, const Tensor4& frame);
Tensor4 read_pgm(const std::filesystem::path& path);

void write_boxes(const std::filesystem::path& path, const std::vector<BBox>& boxes);
/// Parse errors name the file and the 1-based line number.
std::vector<BBox> read_boxes(const std::filesystem::path& path);

void write_phases(const std::filesystem::path& path, const std::vector<Phase>& phases);
std::vector<Phase> read_phases(const std::filesystem::path& path);

void save_sequence(const std::filesystem::path& dir, const Sequence& seq);
/// Reads frames 000001.pgm ... until the ground-truth length is covered.
Sequence load_sequence(const std::filesystem::path& dir);

void write_gate_trace(const std::filesystem::path& path, const GateTrace& trace);
GateTrace read_gate_trace(const std::filesystem::path& path);

// Shortest round-trip decimal text for a double.
std::string format_number(double v);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace dastm::io
