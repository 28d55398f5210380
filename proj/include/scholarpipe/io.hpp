#pragma once

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "scholarpipe/error.hpp"

namespace scholarpipe::io {

/// Reads a text file line by line. gzip input is detected transparently;
/// plain files pass through zlib unchanged.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (!file_) throw Error(Errc::SourceIO, "cannot open " + path.string());
    gzbuffer(file_, 1 << 17);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;
  LineReader(LineReader&& other) noexcept
      : path_(std::move(other.path_)), file_(std::exchange(other.file_, nullptr)) {}
  ~LineReader() {
    if (file_) gzclose(file_);
  }

  // Returns the next line without its terminator, or nullopt at end of input.
  std::optional<std::string> next() {
    std::string line;
    char buf[8192];
    bool any = false;
    while (gzgets(file_, buf, sizeof buf) != nullptr) {
      any = true;
      std::string_view chunk(buf);
      if (!chunk.empty() && chunk.back() == '\n') {
        chunk.remove_suffix(1);
        line.append(chunk);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      line.append(chunk);
    }
    int err = 0;
    gzerror(file_, &err);
    if (err != Z_OK && err != Z_BUF_ERROR)
      throw Error(Errc::SourceIO, "read error in " + path_.string());
    if (!any) return std::nullopt;
    return line;
  }

 private:
  std::filesystem::path path_;
  gzFile file_ = nullptr;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::SourceIO, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a half-written output.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::SourceIO, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(Errc::SourceIO, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_gzip(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  gzFile f = gzopen(path.c_str(), "wb");
  if (!f) throw Error(Errc::SourceIO, "cannot write " + path.string());
  if (!contents.empty() &&
      gzwrite(f, contents.data(), static_cast<unsigned>(contents.size())) == 0) {
    gzclose(f);
    throw Error(Errc::SourceIO, "gzip write failed for " + path.string());
  }
  gzclose(f);
}

// Minimal CSV field quoting (RFC 4180 style).
inline std::string csv_field(std::string_view v) {
  if (v.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(v);
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> parse_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string format_double(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace scholarpipe::io
