// SPDX-License-Identifier: Apache-2.0
//
// Artifact directory plumbing: file layout, the single-writer lock and the
// per-command manifest (config snapshot, input and output hashes, wall time).
#pragma once

#include <nlohmann/json.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "oculus/cli/config.hpp"
#include "oculus/core/io.hpp"

namespace oculus::cli {

/// Where each artifact lives. Inputs may sit outside `root` (ablation
/// variants read the main run's cohort), outputs always sit inside it.
struct ArtifactLayout {
  fs::path root;
  fs::path cohort;
  fs::path instructions;
  fs::path align_oct;
  fs::path align_cfp;
  fs::path sft;

  fs::path align_loss(Modality m) const { return root / ("align_loss_" + std::string(to_string(m)) + ".csv"); }
  fs::path retrieval() const { return root / "retrieval.json"; }
  fs::path sft_loss() const { return root / "sft_loss.csv"; }
  fs::path eval_samples() const { return root / "eval_samples.csv"; }
  fs::path eval_summary() const { return root / "eval_summary.json"; }
  fs::path judge_scores() const { return root / "judge_scores.csv"; }
  fs::path ablation() const { return root / "ablation.json"; }
  fs::path report_text() const { return root / "report.txt"; }
  fs::path report_csv() const { return root / "report.csv"; }
  fs::path manifest(std::string_view command) const { return root / ("manifest_" + std::string(command) + ".json"); }
  fs::path lock() const { return root / ".lock"; }

  static ArtifactLayout from_config(const RunConfig& c) {
    return {c.paths.artifact_dir,
            c.resolve(c.paths.cohort_file),
            c.resolve(c.paths.instructions_file),
            c.resolve(c.paths.align_oct_checkpoint),
            c.resolve(c.paths.align_cfp_checkpoint),
            c.resolve(c.paths.sft_checkpoint)};
  }
};

/// Throws MissingArtifactError naming the command that writes `path`.
inline void require_artifact(const fs::path& path, std::string_view producer) {
  if (!fs::exists(path))
    throw MissingArtifactError(path.string() + " does not exist; run `oculus " + std::string(producer) + "` first");
}

/// One writer per artifact directory. The lock file is created exclusively
/// and removed when the guard goes out of scope.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& lock_path) : path_(lock_path) {
    fs::create_directories(path_.parent_path());
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      if (errno == EEXIST)
        throw ConfigError("artifact directory " + path_.parent_path().string() +
                          " is locked by another run; delete " + path_.string() + " if that run is gone");
      throw ConfigError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    (void)!::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

/// Collects what a command read and wrote. Paths are stored relative to the
/// artifact root when they sit under it, so manifests compare across roots.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& config, fs::path root)
      : command_(std::move(command)), config_(config), root_(std::move(root)),
        start_(std::chrono::steady_clock::now()) {}

  void input(const fs::path& p) { inputs_.push_back(entry(p)); }

  /// Writes `contents` atomically and records it as an output.
  void write(const fs::path& p, std::string_view contents) {
    io::write_file_atomic(p, contents);
    outputs_.push_back(entry(p));
  }
  void write_json(const fs::path& p, const nlohmann::json& j) { write(p, j.dump(2) + "\n"); }

  const std::vector<nlohmann::json>& outputs() const { return outputs_; }

  nlohmann::json finish(const fs::path& manifest_path) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    nlohmann::json j{{"command", command_},
                     {"seed", config_.seed},
                     {"config", to_json(config_)},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"wall_time_seconds", wall}};
    io::write_file_atomic(manifest_path, j.dump(2) + "\n");
    return j;
  }

 private:
  nlohmann::json entry(const fs::path& p) const {
    const auto rel = fs::relative(p, root_);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    return {{"path", inside ? rel.generic_string() : p.generic_string()}, {"sha256", io::sha256_file(p)}};
  }

  std::string command_;
  RunConfig config_;
  fs::path root_;
  std::chrono::steady_clock::time_point start_;
  std::vector<nlohmann::json> inputs_;
  std::vector<nlohmann::json> outputs_;
};

}  // namespace oculus::cli
