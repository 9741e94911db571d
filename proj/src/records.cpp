#include "hdovd/records.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace hdovd {

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_real(std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc{} || res.ptr != text.data() + text.size()) {
    throw std::runtime_error("malformed number: '" + std::string(text) + "'");
  }
  return v;
}

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

void expect_fields(const std::vector<std::string>& row, std::size_t n,
                   const std::filesystem::path& path) {
  if (row.size() != n) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(n) + " fields, got " +
                             std::to_string(row.size()));
  }
}

Box parse_box(const std::vector<std::string>& row, std::size_t first) {
  return Box::checked(parse_real(row[first]), parse_real(row[first + 1]), parse_real(row[first + 2]),
                      parse_real(row[first + 3]));
}

void put_box(std::ostream& os, const Box& b) {
  os << format_real(b.x1) << '\t' << format_real(b.y1) << '\t' << format_real(b.x2) << '\t'
     << format_real(b.y2);
}

}  // namespace

void write_proposals(const std::filesystem::path& path, std::span<const Proposal> proposals) {
  auto os = open_out(path);
  for (const auto& p : proposals) {
    os << p.image_id << '\t';
    put_box(os, p.box);
    os << '\t' << format_real(p.objectness) << '\n';
  }
}

std::vector<Proposal> read_proposals(const std::filesystem::path& path) {
  std::vector<Proposal> out;
  for (const auto& row : read_tsv(path)) {
    expect_fields(row, 6, path);
    Proposal p{parse_box(row, 1), parse_real(row[5]), row[0]};
    if (!(p.objectness >= 0.0 && p.objectness <= 1.0)) {
      throw std::runtime_error(path.string() + ": objectness outside [0, 1]");
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_ground_truth(const std::filesystem::path& path, std::span<const GtRecord> records) {
  auto os = open_out(path);
  for (const auto& r : records) {
    os << r.image_id << '\t';
    put_box(os, r.box);
    os << '\t' << r.class_name << '\t' << (r.novel ? "novel" : "base") << '\n';
  }
}

std::vector<GtRecord> read_ground_truth(const std::filesystem::path& path) {
  std::vector<GtRecord> out;
  for (const auto& row : read_tsv(path)) {
    expect_fields(row, 7, path);
    if (row[6] != "base" && row[6] != "novel") {
      throw std::runtime_error(path.string() + ": split must be 'base' or 'novel'");
    }
    out.push_back(GtRecord{row[0], parse_box(row, 1), row[5], row[6] == "novel"});
  }
  return out;
}

void write_annotations(const std::filesystem::path& path, std::span<const PseudoLabel> labels) {
  auto os = open_out(path);
  for (const auto& l : labels) {
    os << l.image_id << '\t';
    put_box(os, l.box);
    os << '\t' << l.label << '\t' << format_real(l.raw_score) << '\t' << format_real(l.weight)
       << '\n';
  }
}

std::vector<PseudoLabel> read_annotations(const std::filesystem::path& path) {
  std::vector<PseudoLabel> out;
  for (const auto& row : read_tsv(path)) {
    expect_fields(row, 8, path);
    out.push_back(PseudoLabel{row[0], parse_box(row, 1), row[5], parse_real(row[6]),
                              parse_real(row[7]), Vec{}});
  }
  return out;
}

void write_detections(const std::filesystem::path& path, std::span<const DetectionRecord> dets) {
  auto os = open_out(path);
  for (const auto& d : dets) {
    os << d.image_id << '\t';
    put_box(os, d.box);
    os << '\t' << d.class_name << '\t' << format_real(d.score) << '\n';
  }
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::vector<DetectionRecord> out;
  for (const auto& row : read_tsv(path)) {
    expect_fields(row, 7, path);
    out.push_back(DetectionRecord{row[0], parse_box(row, 1), row[5], parse_real(row[6])});
  }
  return out;
}

}  // namespace hdovd
