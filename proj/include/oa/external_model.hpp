#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "oa/model_adapter.hpp"

namespace oa {

struct ExternalModelOptions {
  std::size_t batch_size = 64;
  std::chrono::milliseconds timeout{30'000};
  int retries = 2;
};

// Line-delimited JSON protocol shared by the subprocess and HTTP transports.
//
//   startup:  {"handshake": {"classes": [...]}}  ->  {"ok": true}
//   request:  {"id": "<n>", "texts": ["...", ...]} ->  {"id": "<n>", "probs": [[...], ...]}
//
// Texts are token lists rejoined with single spaces. Unparseable replies and
// timeouts raise TransportError (after retries); well-formed replies that
// break the contract raise ProtocolViolation.
class ExternalModel : public Classifier {
 public:
  ExternalModel(ClassConfig classes, std::string identity, ExternalModelOptions options);
  ~ExternalModel() override = default;

  const ClassConfig& class_config() const override { return classes_; }
  std::string identity() const override { return identity_; }
  std::vector<Distribution> predict_proba(std::span<const TokenList> texts) const override;

 protected:
  // Sends one message and returns the raw reply line. Throws TransportError
  // on timeout or a dead peer.
  virtual std::string exchange(const std::string& message) const = 0;
  // Drops the connection so the next exchange starts fresh.
  virtual void reset() const = 0;

  // Runs the handshake; call from the derived constructor.
  void handshake() const;
  const ExternalModelOptions& options() const noexcept { return options_; }

 private:
  std::vector<Distribution> request_batch(std::span<const TokenList> texts) const;
  std::string exchange_with_retries(const std::string& message) const;

  ClassConfig classes_;
  std::string identity_;
  ExternalModelOptions options_;
  mutable std::mutex mutex_;
  mutable std::uint64_t next_id_ = 0;
};

// Child process speaking the protocol over stdin/stdout.
class SubprocessModel final : public ExternalModel {
 public:
  SubprocessModel(std::vector<std::string> argv, ClassConfig classes,
                  ExternalModelOptions options = {});
  ~SubprocessModel() override;

 protected:
  std::string exchange(const std::string& message) const override;
  void reset() const override;

 private:
  void spawn() const;
  void terminate() const;

  std::vector<std::string> argv_;
  mutable int pid_ = -1;
  mutable int to_child_ = -1;
  mutable int from_child_ = -1;
  mutable std::string pending_;
  mutable bool needs_handshake_ = false;
};

// Protocol messages POSTed to a URL, one message per request body.
class HttpModel final : public ExternalModel {
 public:
  HttpModel(const std::string& url, ClassConfig classes, ExternalModelOptions options = {});
  ~HttpModel() override;

 protected:
  std::string exchange(const std::string& message) const override;
  void reset() const override {}

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Splits a command line on whitespace, honouring single and double quotes.
std::vector<std::string> split_command(const std::string& command);

}  // namespace oa
