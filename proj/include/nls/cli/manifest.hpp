#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "nls/cli/config.hpp"
#include "nls/core/binary_io.hpp"

namespace nls::cli {

inline constexpr char kToolVersion[] = "0.1.0";
inline constexpr char kManifestName[] = "run_manifest.json";
inline constexpr char kLockName[] = ".lock";

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Record of one run directory. Artifact paths are relative to the run root.
struct RunManifest {
  std::string fingerprint;
  std::string tool_version = kToolVersion;
  std::string created;
  std::string updated;
  std::map<std::string, std::string> artifacts;
  json config;
};

inline json to_json(const RunManifest& m) {
  return {{"fingerprint", m.fingerprint}, {"tool_version", m.tool_version}, {"created", m.created},
          {"updated", m.updated},         {"artifacts", m.artifacts},       {"config", m.config}};
}

inline std::optional<RunManifest> load_manifest(const std::filesystem::path& root) {
  const auto path = root / kManifestName;
  if (!std::filesystem::exists(path)) return std::nullopt;
  const auto j = json::parse(io::read_file(path), nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
  RunManifest m;
  try {
    m.fingerprint = j.at("fingerprint");
    m.tool_version = j.at("tool_version");
    m.created = j.at("created");
    m.updated = j.at("updated");
    m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
    m.config = j.at("config");
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

/// Opens (or starts) the manifest of `root` for a run with `config`. A
/// manifest written under a different fingerprint is only replaced with
/// `force`.
inline RunManifest open_manifest(const std::filesystem::path& root, const RunConfig& config, bool force) {
  const auto fp = fingerprint(config);
  auto existing = load_manifest(root);
  if (existing && existing->fingerprint != fp) {
    if (!force) {
      throw ValidationError("run directory " + root.string() + " belongs to config fingerprint " +
                            existing->fingerprint.substr(0, 12) + ", this config is " + fp.substr(0, 12) +
                            "; pass --force to overwrite it");
    }
    existing.reset();
  }
  if (existing) return *existing;
  RunManifest m;
  m.fingerprint = fp;
  m.created = utc_timestamp();
  m.config = to_json(config);
  m.config.erase("output_dir");
  return m;
}

/// Writes the manifest after checking that every listed artifact exists.
inline void save_manifest(const std::filesystem::path& root, RunManifest& m) {
  for (const auto& [name, rel] : m.artifacts) {
    if (!std::filesystem::exists(root / rel)) {
      throw ConsistencyError("manifest lists artifact '" + name + "' at " + rel + " but it does not exist");
    }
  }
  m.updated = utc_timestamp();
  io::write_file(root / kManifestName, to_json(m).dump(2) + "\n");
}

/// Advisory lock: an exclusively created file holding the owner's pid.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& root)
      : path_(root / kLockName), created_root_(std::filesystem::create_directories(root)) {
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_EXCL, 0644);
    if (fd < 0) {
      std::string owner;
      try {
        owner = io::read_file(path_);
      } catch (const Error&) {
      }
      throw IoError("run directory " + root.string() + " is locked by another command (pid " + owner +
                    "); delete " + path_.string() + " if that process is gone");
    }
    const std::string pid = std::to_string(::getpid());
    const bool ok = ::write(fd, pid.data(), pid.size()) == static_cast<ssize_t>(pid.size());
    ::close(fd);
    if (!ok) throw IoError("could not write " + path_.string());
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
    if (created_root_ && std::filesystem::is_empty(path_.parent_path(), ec)) std::filesystem::remove(path_.parent_path(), ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  bool created_root_ = false;
};

}  // namespace nls::cli
