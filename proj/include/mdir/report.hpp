#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdir/dense_matrix.hpp"
#include "mdir/detect.hpp"

namespace mdir {

enum class HeatmapNormalization { abs_max, unit };

struct HeatmapSpec {
  std::string source;  // stage identifier, recorded in the report
  std::int64_t crop_rows = 512;
  std::int64_t crop_cols = 512;
  HeatmapNormalization normalization = HeatmapNormalization::abs_max;
  std::string output_path;
};

// Crops the top-left block and maps |value|/max onto a white-to-red ramp
// (white = 0, pure red = max). Returns the PPM (P6) bytes; bit-exact:
// "P6\n{w} {h}\n255\n" followed by row-major RGB triplets.
std::vector<std::uint8_t> render_heatmap_ppm(const DenseMatrix& m,
                                             const HeatmapSpec& spec);

// Same pixels encoded as a PNG (8-bit RGB, zlib-deflated).
std::vector<std::uint8_t> render_heatmap_png(const DenseMatrix& m,
                                             const HeatmapSpec& spec);

// Renders and writes spec.output_path; format chosen by `png`.
void render_heatmap(const DenseMatrix& m, const HeatmapSpec& spec, bool png = false);

// Report JSON (schema_version 1). parse(serialize(x)) == x field-for-field.
std::string report_to_json_text(const DetectionReport& report,
                                const std::vector<std::string>& heatmap_paths = {});
DetectionReport report_from_json_text(const std::string& text);

}  // namespace mdir
