#include "oa/external_model.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "oa/errors.hpp"

extern char** environ;

namespace oa {

ExternalModel::ExternalModel(ClassConfig classes, std::string identity,
                             ExternalModelOptions options)
    : classes_(std::move(classes)), identity_(std::move(identity)), options_(options) {
  if (options_.batch_size == 0) throw ConfigError("external batch size must be positive");
}

void ExternalModel::handshake() const {
  nlohmann::json msg;
  msg["handshake"]["classes"] = classes_.names();
  const std::string raw = exchange_with_retries(msg.dump());
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    throw TransportError("unparseable handshake reply", raw);
  }
  if (!reply.is_object() || !reply.contains("ok") || reply["ok"] != true) {
    throw ProtocolViolation("handshake rejected: " + raw);
  }
}

std::string ExternalModel::exchange_with_retries(const std::string& message) const {
  for (int attempt = 0;; ++attempt) {
    try {
      return exchange(message);
    } catch (const TransportError& e) {
      if (attempt >= options_.retries) throw;
      spdlog::warn("external model transport failure ({}); retry {}/{}", e.what(), attempt + 1,
                   options_.retries);
      reset();
    }
  }
}

std::vector<Distribution> ExternalModel::predict_proba(std::span<const TokenList> texts) const {
  std::lock_guard lock(mutex_);
  std::vector<Distribution> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += options_.batch_size) {
    const std::size_t len = std::min(options_.batch_size, texts.size() - begin);
    auto batch = request_batch(texts.subspan(begin, len));
    std::move(batch.begin(), batch.end(), std::back_inserter(out));
  }
  return out;
}

std::vector<Distribution> ExternalModel::request_batch(std::span<const TokenList> texts) const {
  const std::string id = std::to_string(next_id_++);
  nlohmann::json msg;
  msg["id"] = id;
  msg["texts"] = nlohmann::json::array();
  for (const auto& t : texts) msg["texts"].push_back(join_tokens(t));

  const std::string raw = exchange_with_retries(msg.dump());
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    throw TransportError("unparseable reply from external model", raw);
  }
  if (!reply.is_object() || !reply.contains("id") || reply["id"] != id) {
    throw ProtocolViolation("reply does not echo request id " + id + ": " + raw);
  }
  if (!reply.contains("probs") || !reply["probs"].is_array() ||
      reply["probs"].size() != texts.size()) {
    throw ProtocolViolation(fmt::format("reply must carry {} probability rows: {}", texts.size(), raw));
  }
  std::vector<Distribution> out;
  out.reserve(texts.size());
  for (const auto& row : reply["probs"]) {
    if (!row.is_array()) throw ProtocolViolation("probability row is not an array: " + raw);
    Distribution d;
    for (const auto& v : row) {
      if (!v.is_number()) throw ProtocolViolation("non-numeric probability: " + raw);
      d.probs.push_back(v.get<double>());
    }
    d.validate(classes_.size());
    out.push_back(std::move(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// SubprocessModel

SubprocessModel::SubprocessModel(std::vector<std::string> argv, ClassConfig classes,
                                 ExternalModelOptions options)
    : ExternalModel(std::move(classes), "cmd:" + fmt::format("{}", fmt::join(argv, " ")), options),
      argv_(std::move(argv)) {
  if (argv_.empty()) throw ConfigError("external model command is empty");
  spawn();
  handshake();
}

SubprocessModel::~SubprocessModel() { terminate(); }

void SubprocessModel::spawn() const {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    throw TransportError(std::string("pipe failed: ") + std::strerror(errno), "");
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, in_pipe[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, in_pipe[1]);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);

  std::vector<char*> args;
  for (const auto& a : argv_) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  pid_t pid = -1;
  const int rc = posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(in_pipe[0]);
  close(out_pipe[1]);
  if (rc != 0) {
    close(in_pipe[1]);
    close(out_pipe[0]);
    throw ConfigError(fmt::format("cannot start external model '{}': {}", argv_[0],
                                  std::strerror(rc)));
  }
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);
  pending_.clear();
}

void SubprocessModel::terminate() const {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // Give the child a moment to exit on EOF before killing it.
    for (int i = 0; i < 20; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      usleep(5'000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void SubprocessModel::reset() const {
  terminate();
  spawn();
  needs_handshake_ = true;
}

std::string SubprocessModel::exchange(const std::string& message) const {
  if (needs_handshake_) {
    needs_handshake_ = false;
    nlohmann::json hs;
    hs["handshake"]["classes"] = class_config().names();
    const std::string reply = exchange(hs.dump());
    if (reply.find("\"ok\"") == std::string::npos) {
      throw TransportError("handshake failed after restart", reply);
    }
  }
  if (to_child_ < 0) throw TransportError("external model process is not running", "");

  std::string line = message + "\n";
  std::size_t written = 0;
  // A dead child would raise SIGPIPE; ignore it for the duration of the write.
  struct sigaction ignore {}, previous {};
  ignore.sa_handler = SIG_IGN;
  sigaction(SIGPIPE, &ignore, &previous);
  while (written < line.size()) {
    const ssize_t n = write(to_child_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      sigaction(SIGPIPE, &previous, nullptr);
      throw TransportError(std::string("write to external model failed: ") + std::strerror(errno),
                           pending_);
    }
    written += static_cast<std::size_t>(n);
  }
  sigaction(SIGPIPE, &previous, nullptr);

  const auto deadline = std::chrono::steady_clock::now() + options().timeout;
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string reply = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return reply;
    }
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw TransportError(fmt::format("external model timed out after {} ms",
                                       options().timeout.count()),
                           pending_);
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int rc = poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (rc < 0 && errno == EINTR) continue;
    if (rc == 0) continue;
    char buf[4096];
    const ssize_t n = read(from_child_, buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw TransportError("external model closed its output", pending_);
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

// ---------------------------------------------------------------------------
// HttpModel

struct HttpModel::Impl {
  std::unique_ptr<httplib::Client> client;
  std::string path;
};

HttpModel::HttpModel(const std::string& url, ClassConfig classes, ExternalModelOptions options)
    : ExternalModel(std::move(classes), "http:" + url, options), impl_(std::make_unique<Impl>()) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("model URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
  impl_->path = path_start == std::string::npos ? "/" : url.substr(path_start);
  impl_->client = std::make_unique<httplib::Client>(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  impl_->client->set_connection_timeout(secs.count(), usecs.count());
  impl_->client->set_read_timeout(secs.count(), usecs.count());
  impl_->client->set_write_timeout(secs.count(), usecs.count());
  handshake();
}

HttpModel::~HttpModel() = default;

std::string HttpModel::exchange(const std::string& message) const {
  auto res = impl_->client->Post(impl_->path, message, "application/json");
  if (!res) {
    throw TransportError("HTTP request failed: " + httplib::to_string(res.error()), "");
  }
  if (res->status != 200) {
    throw TransportError(fmt::format("HTTP status {}", res->status), res->body);
  }
  std::string body = res->body;
  while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) body.pop_back();
  return body;
}

std::vector<std::string> split_command(const std::string& command) {
  std::vector<std::string> out;
  std::string current;
  bool have = false;
  char quote = 0;
  for (char c : command) {
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else {
        current.push_back(c);
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      have = true;
    } else if (c == ' ' || c == '\t') {
      if (have) out.push_back(std::move(current));
      current.clear();
      have = false;
    } else {
      current.push_back(c);
      have = true;
    }
  }
  if (quote) throw ConfigError("unbalanced quote in command: " + command);
  if (have) out.push_back(std::move(current));
  return out;
}

}  // namespace oa
