#pragma once

// Numeric CSV in and out, and artifact files that never silently replace
// different content.

#include "qbdecon/mixture.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace qbd {

// Comma-separated numbers, one observation per line. With `header` the first
// line is skipped. Blank lines are ignored. Throws IoError.
Matrix read_csv(const std::filesystem::path& path, bool header = false);
Matrix parse_csv(std::istream& in, bool header = false, const std::string& source = "<stream>");

void write_csv(std::ostream& out, const Matrix& values, const std::vector<std::string>& columns = {});

struct WrittenArtifact {
  std::filesystem::path path;
  bool renamed = false;  // a different file already had the preferred name
};

// Writes `content` to dir/name. An existing identical file is left alone; a
// differing one keeps its bytes and the new content goes to name.1, name.2,
// ... before the extension. Throws IoError.
WrittenArtifact write_artifact(const std::filesystem::path& dir, const std::string& name, const std::string& content);

std::string read_text(const std::filesystem::path& path);

}  // namespace qbd
