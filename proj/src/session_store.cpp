#include "loadermine/session_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace loadermine {

void MemorySink::append(const Conversation& c) {
  std::lock_guard lock(mu_);
  items_.push_back(c);
}

std::vector<Conversation> MemorySink::snapshot() const {
  std::lock_guard lock(mu_);
  return items_;
}

JsonlSessionStore::JsonlSessionStore(std::filesystem::path path) : path_(std::move(path)) {
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw std::runtime_error(fmt::format("cannot open session store {}: {}", path_.string(),
                                         std::strerror(errno)));
  }
}

JsonlSessionStore::~JsonlSessionStore() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlSessionStore::append(const Conversation& c) {
  std::string line = to_jsonl(c);
  line.push_back('\n');
  std::lock_guard lock(mu_);
  std::size_t off = 0;
  while (off < line.size()) {
    const ssize_t n = ::write(fd_, line.data() + off, line.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(fmt::format("session store write failed: {}", std::strerror(errno)));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool SessionFilter::matches(const Conversation& c) const {
  if (started_after && c.started_at < *started_after) return false;
  if (started_before && !(c.started_at < *started_before)) return false;
  if (peer_host && host_of(c.peer_addr) != *peer_host) return false;
  if (origin_tag && c.origin_tag != *origin_tag) return false;
  return true;
}

ExportResult export_sessions(std::istream& in, const SessionFilter& filter) {
  ExportResult result;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      auto c = conversation_from_json(nlohmann::json::parse(line));
      if (filter.matches(c)) result.sessions.push_back(std::move(c));
    } catch (const std::exception&) {
      ++result.corrupt_records;
    }
  }
  std::stable_sort(result.sessions.begin(), result.sessions.end(),
                   [](const Conversation& a, const Conversation& b) { return a.started_at < b.started_at; });
  return result;
}

ExportResult export_sessions(const std::filesystem::path& store, const SessionFilter& filter) {
  std::ifstream in(store, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read session store {}", store.string()));
  return export_sessions(in, filter);
}

void write_sessions(const std::filesystem::path& path, const std::vector<Conversation>& sessions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  for (const auto& c : sessions) out << to_jsonl(c) << '\n';
}

}  // namespace loadermine
