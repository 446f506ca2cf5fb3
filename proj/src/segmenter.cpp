#include "lesioncal/segmenter.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "lesioncal/nifti.hpp"
#include "lesioncal/preprocess.hpp"

extern char** environ;

namespace lesioncal {

namespace {

std::size_t count_occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + needle.size())) ++n;
  return n;
}

std::string replace_once(std::string s, const std::string& needle, const std::string& value) {
  const auto pos = s.find(needle);
  if (pos != std::string::npos) s.replace(pos, needle.size(), value);
  return s;
}

class ProcessLimiter {
 public:
  void set_limit(std::size_t n) {
    std::lock_guard lock(m_);
    limit_ = std::max<std::size_t>(1, n);
    cv_.notify_all();
  }
  void acquire() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return running_ < limit_; });
    ++running_;
  }
  void release() {
    std::lock_guard lock(m_);
    --running_;
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::size_t limit_ = 1;
  std::size_t running_ = 0;
};

ProcessLimiter& limiter() {
  static ProcessLimiter l;
  return l;
}

struct LimiterSlot {
  LimiterSlot() { limiter().acquire(); }
  ~LimiterSlot() { limiter().release(); }
  LimiterSlot(const LimiterSlot&) = delete;
  LimiterSlot& operator=(const LimiterSlot&) = delete;
};

class ScratchDir {
 public:
  explicit ScratchDir(const std::filesystem::path& parent) {
    static std::atomic<unsigned long> counter{0};
    const auto base = parent.empty() ? std::filesystem::temp_directory_path() : parent;
    path_ = base / ("lesioncal_seg_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

std::string log_tail(const std::filesystem::path& p, std::size_t max_bytes = 1000) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  std::string text = s.str();
  if (text.size() > max_bytes) text = "..." + text.substr(text.size() - max_bytes);
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return text;
}

// Runs `command` under /bin/sh in its own process group; returns the exit
// status or throws on timeout.
int run_shell(const std::string& command, const std::filesystem::path& cwd, const std::filesystem::path& log,
              double timeout_s) {
  const std::string full = "cd " + shell_quote(cwd.string()) + " && " + command;
  posix_spawn_file_actions_t actions;
  posix_spawnattr_t attr;
  posix_spawn_file_actions_init(&actions);
  posix_spawnattr_init(&attr);
  posix_spawn_file_actions_addopen(&actions, STDIN_FILENO, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_adddup2(&actions, STDOUT_FILENO, STDERR_FILENO);
  posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
  posix_spawnattr_setpgroup(&attr, 0);

  const char* argv[] = {"sh", "-c", full.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, const_cast<char* const*>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  posix_spawnattr_destroy(&attr);
  if (rc != 0) throw std::runtime_error("cannot start /bin/sh: error " + std::to_string(rc));

  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
  int status = 0;
  for (;;) {
    const pid_t r = ::waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0 && errno != EINTR) throw std::runtime_error("waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      ::kill(-pid, SIGKILL);
      ::waitpid(pid, &status, 0);
      throw std::runtime_error("timed out after " + std::to_string(timeout_s) + " s");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  if (WIFSIGNALED(status)) return 128 + WTERMSIG(status);
  return -1;
}

ProbabilityMap checked_probability(GridVolume v, const GridVolume& like, const std::string& what) {
  if (!v.same_grid(like)) throw std::runtime_error(what + ": output grid does not match the input grid");
  if (!is_probability(v)) throw std::runtime_error(what + ": output values outside [0, 1]");
  return ProbabilityMap(std::move(v));
}

ProbabilityMap run_external(const ExternalSegmenter& ext, const GridVolume& image) {
  LimiterSlot slot;
  ScratchDir dir(ext.workdir);
  const auto in = std::filesystem::absolute(dir.path() / "input.nii");
  const auto out = std::filesystem::absolute(dir.path() / "output.nii");
  nifti::write_volume(image, in, nifti::DataType::float32);
  std::string cmd = replace_once(ext.command, "{input}", shell_quote(in.string()));
  cmd = replace_once(cmd, "{output}", shell_quote(out.string()));

  const auto cwd = ext.workdir.empty() ? dir.path() : std::filesystem::absolute(ext.workdir);
  const int code = run_shell(cmd, cwd, dir.path() / "log.txt", ext.timeout_s);
  if (code != 0) {
    std::string msg = "command exited with code " + std::to_string(code);
    const std::string tail = log_tail(dir.path() / "log.txt");
    if (!tail.empty()) msg += ": " + tail;
    throw std::runtime_error(msg);
  }
  if (!std::filesystem::exists(out)) throw std::runtime_error("command wrote no output file");
  return checked_probability(nifti::read_volume(out).volume, image, "external segmenter");
}

}  // namespace

void BuiltinSegmenter::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("builtin segmenter: tau must be > 0");
  if (!std::isfinite(theta) || !std::isfinite(region_theta))
    throw std::invalid_argument("builtin segmenter: thresholds must be finite");
}

void ExternalSegmenter::validate() const {
  if (count_occurrences(command, "{input}") != 1 || count_occurrences(command, "{output}") != 1)
    throw std::invalid_argument("external segmenter: command must contain {input} and {output} exactly once");
  if (!(timeout_s > 0.0)) throw std::invalid_argument("external segmenter: timeout must be > 0");
}

void PredictionSet::validate() const {
  if (dir.empty()) throw std::invalid_argument("prediction set: empty directory");
  if (count_occurrences(pattern, "{id}") != 1)
    throw std::invalid_argument("prediction set: pattern must contain {id} exactly once");
}

std::filesystem::path PredictionSet::path_for(const std::string& study_id) const {
  return dir / replace_once(pattern, "{id}", study_id);
}

void SegmenterHandle::validate() const {
  if (name.empty()) throw std::invalid_argument("segmenter with empty name");
  std::visit([](const auto& s) { s.validate(); }, impl);
}

bool SegmenterHandle::runs_on_images() const { return !std::holds_alternative<PredictionSet>(impl); }

SegmenterError::SegmenterError(const std::string& model, const std::string& study, const std::string& what)
    : std::runtime_error("model " + model + ", study " + study + ": " + what), model_(model), study_(study) {}

ProbabilityMap builtin_segment(const BuiltinSegmenter& s, const GridVolume& image) {
  s.validate();
  if (s.region) require_same_grid(s.region->volume(), image, "builtin segmenter region");
  GridVolume p = normalize_intensity(image);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double theta = s.region && s.region->contains(i) ? s.region_theta : s.theta;
    p[i] = std::clamp((p[i] - theta) / s.tau, 0.0, 1.0);
  }
  return ProbabilityMap(std::move(p));
}

ProbabilityMap run_segmenter(const SegmenterHandle& handle, const GridVolume& image, const std::string& study_id) {
  try {
    if (const auto* b = std::get_if<BuiltinSegmenter>(&handle.impl)) return builtin_segment(*b, image);
    if (const auto* e = std::get_if<ExternalSegmenter>(&handle.impl)) {
      e->validate();
      return run_external(*e, image);
    }
    const auto& set = std::get<PredictionSet>(handle.impl);
    if (study_id.empty()) throw std::invalid_argument("prediction set needs a study id");
    const auto path = set.path_for(study_id);
    if (!std::filesystem::exists(path)) throw std::runtime_error("missing prediction " + path.string());
    return checked_probability(nifti::read_volume(path).volume, image, "prediction " + path.string());
  } catch (const SegmenterError&) {
    throw;
  } catch (const std::exception& e) {
    throw SegmenterError(handle.name, study_id.empty() ? "?" : study_id, e.what());
  }
}

void set_external_concurrency(std::size_t limit) { limiter().set_limit(limit); }

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

}  // namespace lesioncal
