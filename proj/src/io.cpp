#include "qbdecon/io.hpp"

#include "qbdecon/error.hpp"
#include "internal/text.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace qbd {

namespace {

std::vector<double> parse_row(const std::string& line, const std::string& source, std::size_t line_no) {
  std::vector<double> row;
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (true) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    double v = 0.0;
    const auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || next == p) {
      throw IoError(source + ":" + std::to_string(line_no) + ": not a number in field " +
                    std::to_string(row.size() + 1));
    }
    row.push_back(v);
    p = next;
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    if (p == end) break;
    if (*p != ',') throw IoError(source + ":" + std::to_string(line_no) + ": expected ','");
    ++p;
  }
  return row;
}

}  // namespace

Matrix parse_csv(std::istream& in, bool header, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header && line_no == 1) continue;
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    rows.push_back(parse_row(line, source, line_no));
    if (rows.back().size() != rows.front().size()) {
      throw IoError(source + ":" + std::to_string(line_no) + ": expected " + std::to_string(rows.front().size()) +
                    " fields, found " + std::to_string(rows.back().size()));
    }
  }
  if (rows.empty()) throw IoError(source + ": no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(Eigen::Index(r), Eigen::Index(c)) = rows[r][c];
  }
  return m;
}

Matrix read_csv(const std::filesystem::path& path, bool header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, header, path.string());
}

void write_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& columns) {
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  if (!columns.empty()) out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << detail::num(values(r, c));
    out << '\n';
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

WrittenArtifact write_artifact(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const fs::path base(name);
  const std::string stem = base.stem().string();
  const std::string ext = base.extension().string();
  WrittenArtifact out;
  for (int attempt = 0;; ++attempt) {
    out.path = dir / (attempt == 0 ? name : stem + "." + std::to_string(attempt) + ext);
    if (!fs::exists(out.path)) break;
    if (read_text(out.path) == content) return out;
    out.renamed = true;
  }
  std::ofstream f(out.path, std::ios::binary);
  if (!f) throw IoError("cannot write " + out.path.string());
  f << content;
  if (!f) throw IoError("write failed for " + out.path.string());
  return out;
}

}  // namespace qbd
