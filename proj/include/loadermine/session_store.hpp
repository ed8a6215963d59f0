#pragma once

#include "loadermine/conversation.hpp"

#include <filesystem>
#include <mutex>
#include <optional>
#include <vector>

namespace loadermine {

// Destination for finished conversations. Implementations accept concurrent appends.
class SessionSink {
 public:
  virtual ~SessionSink() = default;
  virtual void append(const Conversation& c) = 0;
};

class MemorySink : public SessionSink {
 public:
  void append(const Conversation& c) override;
  std::vector<Conversation> snapshot() const;

 private:
  mutable std::mutex mu_;
  std::vector<Conversation> items_;
};

// Append-only JSON Lines file. Each record goes out in a single O_APPEND write,
// so a concurrent reader never observes half a record.
class JsonlSessionStore : public SessionSink {
 public:
  explicit JsonlSessionStore(std::filesystem::path path);
  ~JsonlSessionStore() override;
  JsonlSessionStore(const JsonlSessionStore&) = delete;
  JsonlSessionStore& operator=(const JsonlSessionStore&) = delete;

  void append(const Conversation& c) override;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

struct SessionFilter {
  std::optional<Timestamp> started_after;   // inclusive
  std::optional<Timestamp> started_before;  // exclusive
  std::optional<std::string> peer_host;
  std::optional<OriginTag> origin_tag;

  bool matches(const Conversation& c) const;
};

struct ExportResult {
  std::vector<Conversation> sessions;  // ordered by started_at, stable
  std::size_t corrupt_records = 0;
};

ExportResult export_sessions(const std::filesystem::path& store, const SessionFilter& filter = {});
ExportResult export_sessions(std::istream& in, const SessionFilter& filter = {});

void write_sessions(const std::filesystem::path& path, const std::vector<Conversation>& sessions);

}  // namespace loadermine
