#pragma once

// Event-log ingestion, the 80/20 per-user sequence split with test-side
// deduplication, corpus serialization, and a synthetic sequence generator
// for desk-scale experiments (with ground-truth next-item distributions).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "hcaseq/io.hpp"
#include "hcaseq/numerics.hpp"

namespace hcaseq {

constexpr int kCorpusFormatVersion = 1;

struct UserSequence {
    std::string id;
    std::vector<int> train;  // first 80% of the user's events, order preserved
    std::vector<int> test;   // remaining 20%, duplicates removed keeping the first occurrence
};

struct Corpus {
    int min_len = 0;
    int max_len = 0;
    std::vector<std::string> item_ids;  // dense index -> original id
    std::vector<UserSequence> users;

    int n_items() const { return static_cast<int>(item_ids.size()); }
    int n_users() const { return static_cast<int>(users.size()); }

    int item_index(const std::string& id) const {
        for (size_t i = 0; i < item_ids.size(); ++i)
            if (item_ids[i] == id) return static_cast<int>(i);
        return -1;
    }
};

// train prefix gets floor(0.8 * len), at least 1; the suffix is the rest.
inline std::pair<std::vector<int>, std::vector<int>> split_sequence(const std::vector<int>& full) {
    const int len = static_cast<int>(full.size());
    const int train_len = std::max(1, static_cast<int>(std::floor(0.8 * len)));
    std::vector<int> train(full.begin(), full.begin() + train_len);
    std::vector<int> test(full.begin() + train_len, full.end());
    return {std::move(train), std::move(test)};
}

inline std::vector<int> dedup_preserve_first(const std::vector<int>& v) {
    std::vector<int> out;
    std::unordered_set<int> seen;
    for (int x : v)
        if (seen.insert(x).second) out.push_back(x);
    return out;
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

// Input format: UTF-8 text, one event per line, `user<TAB>item<TAB>timestamp`
// with integer epoch-second timestamps. Lines starting with '#' and blank
// lines are ignored. Events are sorted per user by (timestamp, file order);
// users outside [min_len, max_len] are dropped; the item vocabulary covers
// every retained event (items seen only in test suffixes stay scoreable).
inline Corpus ingest(const std::string& path, int min_len, int max_len) {
    if (min_len < 1) throw std::invalid_argument("ingest: min_len must be >= 1");
    if (max_len < min_len) throw std::invalid_argument("ingest: max_len must be >= min_len");

    struct RawEvent {
        std::string item;
        int64_t ts;
        size_t order;
    };
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open event log: " + path);

    std::vector<std::string> user_order;
    std::unordered_map<std::string, std::vector<RawEvent>> by_user;
    std::string line;
    size_t line_no = 0;
    size_t order = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const size_t tab1 = line.find('\t');
        const size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos)
            throw std::runtime_error("malformed event line " + std::to_string(line_no) + ": expected 3 tab-separated fields");
        const std::string user = line.substr(0, tab1);
        const std::string item = line.substr(tab1 + 1, tab2 - tab1 - 1);
        const std::string ts_str = line.substr(tab2 + 1);
        if (user.empty() || item.empty())
            throw std::runtime_error("malformed event line " + std::to_string(line_no) + ": empty field");
        int64_t ts = 0;
        try {
            size_t used = 0;
            ts = std::stoll(ts_str, &used);
            if (used != ts_str.size()) throw std::invalid_argument("");
        } catch (...) {
            throw std::runtime_error("malformed event line " + std::to_string(line_no) + ": bad timestamp '" + ts_str + "'");
        }
        auto [it, inserted] = by_user.try_emplace(user);
        if (inserted) user_order.push_back(user);
        it->second.push_back(RawEvent{item, ts, order++});
    }

    Corpus corpus;
    corpus.min_len = min_len;
    corpus.max_len = max_len;
    std::unordered_map<std::string, int> item_index;

    for (const std::string& uid : user_order) {
        auto& events = by_user[uid];
        const int len = static_cast<int>(events.size());
        if (len < min_len || len > max_len) continue;
        std::sort(events.begin(), events.end(), [](const RawEvent& a, const RawEvent& b) {
            if (a.ts != b.ts) return a.ts < b.ts;
            return a.order < b.order;  // timestamp ties keep file order
        });
        std::vector<int> seq;
        seq.reserve(events.size());
        for (const RawEvent& ev : events) {
            auto [it, inserted] = item_index.try_emplace(ev.item, static_cast<int>(corpus.item_ids.size()));
            if (inserted) corpus.item_ids.push_back(ev.item);
            seq.push_back(it->second);
        }
        auto [train, test_raw] = split_sequence(seq);
        UserSequence us;
        us.id = uid;
        us.train = std::move(train);
        us.test = dedup_preserve_first(test_raw);
        corpus.users.push_back(std::move(us));
    }
    if (corpus.users.empty()) throw std::runtime_error("ingest: empty result (no user passed the length filter)");
    return corpus;
}

// ---------------------------------------------------------------------------
// synthetic corpora
// ---------------------------------------------------------------------------

struct SynthConfig {
    int n_users = 100;
    int n_items = 50;
    int seq_len = 20;
    std::string pattern = "markov1";  // markov1 | periodic | gift-noise
    uint64_t seed = 1;
    double concentration = 0.9;  // markov1 transition mass on the preferred successor
    double gift_eps = 0.15;      // gift-noise insertion probability
};

// Ground truth for one transition: predicting the item at `target_pos` from
// the prefix ending at target_pos - 1.
struct OracleRow {
    int user = 0;
    int target_pos = 0;
    int actual = 0;     // item the generator emitted at target_pos
    int best = 0;       // argmax of the true next-item distribution
    double p_best = 0;  // its probability
    bool gift = false;  // whether the emitted item was a gift insertion
};

struct SynthResult {
    Corpus corpus;
    std::vector<OracleRow> oracle;
};

// Deterministic generator. The vocabulary is the full item universe
// ("i0".."i{n-1}", index == generator id), so every item is scoreable even
// if it never occurs.
inline SynthResult synth(const SynthConfig& cfg) {
    if (cfg.n_users < 1 || cfg.n_items < 2 || cfg.seq_len < 2)
        throw std::invalid_argument("synth: need n_users >= 1, n_items >= 2, seq_len >= 2");
    if (cfg.pattern != "markov1" && cfg.pattern != "periodic" && cfg.pattern != "gift-noise")
        throw std::invalid_argument("synth: unknown pattern '" + cfg.pattern + "' (markov1 | periodic | gift-noise)");
    if (cfg.concentration < 0.0 || cfg.concentration > 1.0 || cfg.gift_eps < 0.0 || cfg.gift_eps >= 1.0)
        throw std::invalid_argument("synth: concentration in [0,1], gift_eps in [0,1) required");

    Rng rng(cfg.seed);
    SynthResult out;
    out.corpus.min_len = cfg.seq_len;
    out.corpus.max_len = cfg.seq_len;
    out.corpus.item_ids.reserve(cfg.n_items);
    for (int i = 0; i < cfg.n_items; ++i) out.corpus.item_ids.push_back("i" + std::to_string(i));

    const bool gifty = cfg.pattern == "gift-noise";
    const int n_gift = gifty ? std::max(1, cfg.n_items / 10) : 0;
    const int n_real = cfg.n_items - n_gift;
    if (gifty && n_real < 2) throw std::invalid_argument("synth: gift-noise needs at least 2 non-gift items");

    // First-order preferred-successor table over the real items.
    std::vector<int> preferred(static_cast<size_t>(n_real > 0 ? n_real : cfg.n_items));
    if (cfg.pattern != "periodic") {
        const int base = gifty ? n_real : cfg.n_items;
        for (int i = 0; i < base; ++i) {
            int nxt = static_cast<int>(rng.below(static_cast<uint64_t>(base - 1)));
            if (nxt >= i) ++nxt;  // successor != self
            preferred[static_cast<size_t>(i)] = nxt;
        }
    }

    for (int u = 0; u < cfg.n_users; ++u) {
        std::vector<int> seq(static_cast<size_t>(cfg.seq_len));
        std::vector<OracleRow> rows;
        rows.reserve(static_cast<size_t>(cfg.seq_len - 1));

        if (cfg.pattern == "periodic") {
            const int motif_len = 3 + static_cast<int>(rng.below(3));  // 3..5
            std::vector<int> motif(static_cast<size_t>(motif_len));
            std::vector<uint8_t> used(static_cast<size_t>(cfg.n_items), 0);
            for (int m = 0; m < motif_len; ++m) {
                int item = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_items)));
                while (used[static_cast<size_t>(item)]) item = (item + 1) % cfg.n_items;
                used[static_cast<size_t>(item)] = 1;
                motif[static_cast<size_t>(m)] = item;
            }
            for (int t = 0; t < cfg.seq_len; ++t) seq[static_cast<size_t>(t)] = motif[static_cast<size_t>(t % motif_len)];
            for (int t = 1; t < cfg.seq_len; ++t)
                rows.push_back(OracleRow{u, t, seq[static_cast<size_t>(t)], seq[static_cast<size_t>(t)], 1.0, false});
        } else {
            const int base = gifty ? n_real : cfg.n_items;
            int state = static_cast<int>(rng.below(static_cast<uint64_t>(base)));
            seq[0] = state;
            // Probability the chain lands on the preferred successor.
            const double p_pref = cfg.concentration + (1.0 - cfg.concentration) / base;
            for (int t = 1; t < cfg.seq_len; ++t) {
                OracleRow row;
                row.user = u;
                row.target_pos = t;
                row.best = preferred[static_cast<size_t>(state)];
                row.p_best = gifty ? (1.0 - cfg.gift_eps) * p_pref : p_pref;
                if (gifty && rng.unit() < cfg.gift_eps) {
                    // Gift insertion: a uniformly random gift item; the chain
                    // state does not advance (the gift reflects no taste).
                    seq[static_cast<size_t>(t)] = n_real + static_cast<int>(rng.below(static_cast<uint64_t>(n_gift)));
                    row.gift = true;
                } else {
                    int next;
                    if (rng.unit() < cfg.concentration) {
                        next = preferred[static_cast<size_t>(state)];
                    } else {
                        next = static_cast<int>(rng.below(static_cast<uint64_t>(base)));
                    }
                    seq[static_cast<size_t>(t)] = next;
                    state = next;
                }
                row.actual = seq[static_cast<size_t>(t)];
                rows.push_back(row);
            }
        }

        auto [train, test_raw] = split_sequence(seq);
        UserSequence us;
        us.id = "u" + std::to_string(u);
        us.train = std::move(train);
        us.test = dedup_preserve_first(test_raw);
        out.corpus.users.push_back(std::move(us));
        out.oracle.insert(out.oracle.end(), rows.begin(), rows.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

// Counts reflect the stored corpus, i.e. after length filtering and test
// dedup. Sparsity = 1 - feedbacks / (users * items); a degenerate corpus can
// make it negative, which is reported as computed with a warning.
struct CorpusStats {
    int n_users = 0;
    int n_items = 0;
    long long n_feedbacks = 0;
    double avg_seq_len = 0.0;
    double sparsity = 0.0;
    bool sparsity_warning = false;
};

inline CorpusStats stats(const Corpus& corpus) {
    CorpusStats s;
    s.n_users = corpus.n_users();
    s.n_items = corpus.n_items();
    for (const UserSequence& u : corpus.users)
        s.n_feedbacks += static_cast<long long>(u.train.size() + u.test.size());
    s.avg_seq_len = s.n_users > 0 ? static_cast<double>(s.n_feedbacks) / s.n_users : 0.0;
    const double cells = static_cast<double>(s.n_users) * static_cast<double>(s.n_items);
    s.sparsity = cells > 0 ? 1.0 - static_cast<double>(s.n_feedbacks) / cells : 0.0;
    s.sparsity_warning = s.sparsity < 0.0;
    return s;
}

inline std::string format_stats(const CorpusStats& s) {
    std::ostringstream os;
    os << "#users\t#items\t#feedbacks\t#avg. seq. len.\tsparsity (%)\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", s.avg_seq_len);
    std::string avg = buf;
    std::snprintf(buf, sizeof(buf), "%.4f", s.sparsity * 100.0);
    os << s.n_users << "\t" << s.n_items << "\t" << s.n_feedbacks << "\t" << avg << "\t" << buf << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

inline nlohmann::json corpus_to_json(const Corpus& corpus) {
    nlohmann::json users = nlohmann::json::array();
    for (const UserSequence& u : corpus.users)
        users.push_back({{"id", u.id}, {"train", u.train}, {"test", u.test}});
    return nlohmann::json{
        {"format_version", kCorpusFormatVersion},
        {"kind", "hcaseq-corpus"},
        {"min_len", corpus.min_len},
        {"max_len", corpus.max_len},
        {"items", corpus.item_ids},
        {"users", std::move(users)},
    };
}

inline Corpus corpus_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("kind", "") != "hcaseq-corpus")
        throw std::runtime_error("not a corpus document");
    if (j.value("format_version", -1) != kCorpusFormatVersion)
        throw std::runtime_error("unsupported corpus format_version");
    Corpus corpus;
    corpus.min_len = j.at("min_len").get<int>();
    corpus.max_len = j.at("max_len").get<int>();
    corpus.item_ids = j.at("items").get<std::vector<std::string>>();
    for (const auto& ju : j.at("users")) {
        UserSequence u;
        u.id = ju.at("id").get<std::string>();
        u.train = ju.at("train").get<std::vector<int>>();
        u.test = ju.at("test").get<std::vector<int>>();
        for (int idx : u.train)
            if (idx < 0 || idx >= corpus.n_items()) throw std::runtime_error("corpus: train index out of range");
        for (int idx : u.test)
            if (idx < 0 || idx >= corpus.n_items()) throw std::runtime_error("corpus: test index out of range");
        corpus.users.push_back(std::move(u));
    }
    return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    atomic_write_file(path, corpus_to_json(corpus).dump(1, '\t') + "\n");
}

inline Corpus load_corpus(const std::string& path) {
    return corpus_from_json(nlohmann::json::parse(read_file(path)));
}

inline std::string oracle_to_tsv(const std::vector<OracleRow>& rows) {
    std::ostringstream os;
    os << "# user\ttarget_pos\tactual\tbest\tp_best\tgift\n";
    for (const OracleRow& r : rows) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.6f", r.p_best);
        os << r.user << "\t" << r.target_pos << "\t" << r.actual << "\t" << r.best << "\t" << buf << "\t"
           << (r.gift ? 1 : 0) << "\n";
    }
    return os.str();
}

inline std::vector<OracleRow> oracle_from_tsv(const std::string& text) {
    std::vector<OracleRow> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        OracleRow r;
        int gift = 0;
        if (!(ls >> r.user >> r.target_pos >> r.actual >> r.best >> r.p_best >> gift))
            throw std::runtime_error("malformed oracle line: " + line);
        r.gift = gift != 0;
        rows.push_back(r);
    }
    return rows;
}

}  // namespace hcaseq
