#include "mdir/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

#include "mdir/errors.hpp"

namespace mdir {

namespace {

using nlohmann::json;

struct Pixels {
  std::int64_t w = 0, h = 0;
  std::vector<std::uint8_t> rgb;  // row-major triplets
};

Pixels rasterize(const DenseMatrix& m, const HeatmapSpec& spec) {
  if (!m.all_finite()) throw NonFiniteValue("render_heatmap: non-finite input");
  Pixels px;
  px.h = std::min<std::int64_t>(spec.crop_rows, m.rows());
  px.w = std::min<std::int64_t>(spec.crop_cols, m.cols());
  px.rgb.resize(static_cast<std::size_t>(px.w * px.h * 3));

  double maxabs = 1.0;
  if (spec.normalization == HeatmapNormalization::abs_max) {
    maxabs = 0.0;
    for (std::int64_t i = 0; i < px.h; ++i)
      for (std::int64_t j = 0; j < px.w; ++j)
        maxabs = std::max(maxabs, std::abs(m(i, j)));
    if (maxabs == 0.0) maxabs = 1.0;
  }

  std::size_t k = 0;
  for (std::int64_t i = 0; i < px.h; ++i)
    for (std::int64_t j = 0; j < px.w; ++j) {
      const double v = std::clamp(std::abs(m(i, j)) / maxabs, 0.0, 1.0);
      const auto fade = static_cast<std::uint8_t>(std::lround(255.0 * (1.0 - v)));
      px.rgb[k++] = 255;   // red channel stays saturated: white -> red ramp
      px.rgb[k++] = fade;
      px.rgb[k++] = fade;
    }
  return px;
}

void push_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void push_chunk(std::vector<std::uint8_t>& out, const char type[4],
                const std::vector<std::uint8_t>& payload) {
  push_be32(out, static_cast<std::uint32_t>(payload.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uLong crc = crc32(crc32(0L, nullptr, 0), out.data() + crc_start,
                          static_cast<uInt>(out.size() - crc_start));
  push_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

std::vector<std::uint8_t> render_heatmap_ppm(const DenseMatrix& m,
                                             const HeatmapSpec& spec) {
  const Pixels px = rasterize(m, spec);
  const std::string header =
      "P6\n" + std::to_string(px.w) + " " + std::to_string(px.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), px.rgb.begin(), px.rgb.end());
  return out;
}

std::vector<std::uint8_t> render_heatmap_png(const DenseMatrix& m,
                                             const HeatmapSpec& spec) {
  const Pixels px = rasterize(m, spec);

  // filter byte 0 per scanline, then one zlib stream
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>((px.w * 3 + 1) * px.h));
  for (std::int64_t i = 0; i < px.h; ++i) {
    raw.push_back(0);
    const auto* row = px.rgb.data() + i * px.w * 3;
    raw.insert(raw.end(), row, row + px.w * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                9) != Z_OK)
    throw IoError("png: deflate failed");
  deflated.resize(bound);

  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> out(sig, sig + 8);
  std::vector<std::uint8_t> ihdr;
  push_be32(ihdr, static_cast<std::uint32_t>(px.w));
  push_be32(ihdr, static_cast<std::uint32_t>(px.h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  push_chunk(out, "IHDR", ihdr);
  push_chunk(out, "IDAT", deflated);
  push_chunk(out, "IEND", {});
  return out;
}

void render_heatmap(const DenseMatrix& m, const HeatmapSpec& spec, bool png) {
  const std::vector<std::uint8_t> bytes =
      png ? render_heatmap_png(m, spec) : render_heatmap_ppm(m, spec);
  std::ofstream out(spec.output_path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open heatmap output: " + spec.output_path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("heatmap write failed: " + spec.output_path);
}

namespace {

std::string reliability_name(Reliability r) {
  return r == Reliability::full_rank ? "full_rank" : "rank_deficient";
}
Reliability reliability_from(const std::string& s) {
  return s == "full_rank" ? Reliability::full_rank : Reliability::rank_deficient;
}
StageKind stage_from(const std::string& s) {
  for (StageKind k : {StageKind::embedding, StageKind::attn_q, StageKind::attn_k,
                      StageKind::attn_v, StageKind::attn_o, StageKind::mlp})
    if (stage_name(k) == s) return k;
  throw MalformedHeader("unknown stage: " + s);
}

}  // namespace

std::string report_to_json_text(const DetectionReport& report,
                                const std::vector<std::string>& heatmap_paths) {
  json doc;
  doc["schema_version"] = 1;
  doc["related"] = report.related;
  doc["threshold"] = report.threshold;
  doc["models"] = {{"a", report.model_a}, {"b", report.model_b}};
  doc["headline_log10_p"] = report.headline_log10_p;
  doc["wall_time_seconds"] = report.wall_time_seconds;
  doc["warnings"] = report.warnings;
  json findings = json::array();
  for (const AlignmentFinding& f : report.findings) {
    json e;
    e["stage"] = stage_name(f.stage);
    e["layer"] = f.layer >= 0 ? json(f.layer) : json(nullptr);
    e["trace"] = f.trace_c;
    e["raw_trace"] = f.raw_trace;
    if (f.pv) {
      e["log10_p"] = f.pv->log10_p;
      e["p_capped"] = f.pv->p_capped;
      e["dim_d"] = f.pv->dim_d;
      e["sigma_equiv"] = f.pv->sigma_equiv;
    } else {
      e["log10_p"] = nullptr;
      e["p_capped"] = nullptr;
      e["dim_d"] = nullptr;
      e["sigma_equiv"] = nullptr;
    }
    e["significant"] = f.significant();
    e["reliability"] = reliability_name(f.reliability);
    std::string method;
    if (f.perm)
      method = f.perm->method == AssignMethod::heuristic ? "heuristic" : "hungarian";
    else if (!f.row_map.empty())
      method = "row_argmax";
    e["method"] = method.empty() ? json(nullptr) : json(method);
    e["scale"] = f.scale ? json(*f.scale) : json(nullptr);
    e["residual"] = f.residual ? json(*f.residual) : json(nullptr);
    e["error"] = f.error.empty() ? json(nullptr) : json(f.error);
    findings.push_back(std::move(e));
  }
  doc["findings"] = std::move(findings);
  doc["heatmaps"] = heatmap_paths;
  return doc.dump(2) + "\n";
}

DetectionReport report_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw MalformedHeader(std::string("report JSON invalid: ") + e.what());
  }
  DetectionReport report;
  report.related = doc.at("related").get<bool>();
  report.threshold = doc.at("threshold").get<double>();
  report.model_a = doc.at("models").at("a").get<std::string>();
  report.model_b = doc.at("models").at("b").get<std::string>();
  report.headline_log10_p = doc.at("headline_log10_p").get<double>();
  report.wall_time_seconds = doc.at("wall_time_seconds").get<double>();
  report.warnings = doc.at("warnings").get<std::vector<std::string>>();
  for (const json& e : doc.at("findings")) {
    AlignmentFinding f;
    f.stage = stage_from(e.at("stage").get<std::string>());
    f.layer = e.at("layer").is_null() ? -1 : e.at("layer").get<std::int64_t>();
    f.trace_c = e.at("trace").get<double>();
    f.raw_trace = e.at("raw_trace").get<double>();
    if (!e.at("log10_p").is_null()) {
      PValueResult pv;
      pv.trace_c = f.trace_c;
      pv.dim_d = e.at("dim_d").get<std::int64_t>();
      pv.log10_p = e.at("log10_p").get<double>();
      pv.p_capped = e.at("p_capped").get<double>();
      pv.significant = e.at("significant").get<bool>();
      pv.sigma_equiv = e.at("sigma_equiv").get<double>();
      pv.threshold = report.threshold;
      f.pv = pv;
    }
    f.reliability = reliability_from(e.at("reliability").get<std::string>());
    const json& method = e.at("method");
    if (!method.is_null()) {
      const std::string name = method.get<std::string>();
      if (name == "row_argmax") {
        f.row_map.push_back(0);  // marker: method survives the round trip
      } else {
        AssignmentResult res;
        res.method =
            name == "heuristic" ? AssignMethod::heuristic : AssignMethod::hungarian;
        res.total = f.trace_c;
        f.perm = std::move(res);
      }
    }
    if (!e.at("scale").is_null()) f.scale = e.at("scale").get<double>();
    if (!e.at("residual").is_null()) f.residual = e.at("residual").get<double>();
    if (!e.at("error").is_null()) f.error = e.at("error").get<std::string>();
    report.findings.push_back(std::move(f));
  }
  return report;
}

}  // namespace mdir
