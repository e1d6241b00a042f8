#include "mmret/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace mmret {

using nlohmann::json;

std::string modality_name(Modality m) { return m == Modality::Text ? "text" : "image"; }

Modality modality_from_name(const std::string& s) {
    if (s == "text") return Modality::Text;
    if (s == "image") return Modality::Image;
    throw DataError("unknown modality '" + s + "'");
}

int Dataset::count_modality(Modality m) const {
    int n = 0;
    for (const auto& ex : examples) n += (ex.gold_modality == m);
    return n;
}

double SyntheticGenConfig::prior_for_topic(int topic) const {
    if (intent_prior.empty()) return topic % 2 == 0 ? 1.0 : 0.0;  // parity default
    return intent_prior[static_cast<size_t>(topic) % intent_prior.size()];
}

void SyntheticGenConfig::validate() const {
    if (n_topics <= 0) throw ConfigError("n_topics must be positive");
    if (train_dialogues <= 0 || dev_dialogues <= 0 || test_dialogues <= 0)
        throw ConfigError("dialogue counts must be positive");
    if (shard_size() < 2)
        throw ConfigError("vocab_size " + std::to_string(vocab_size) + " too small for " +
                          std::to_string(n_topics) + " topics (needs >= 2 tokens per shard)");
    if (context_utterances_min < 1 || context_utterances_max < context_utterances_min)
        throw ConfigError("bad context utterance range");
    if (utterance_len_min < 3 || utterance_len_max < utterance_len_min)
        throw ConfigError("utterance length range must start at >= 3 (signature + content)");
    if (alignment_noise < 0.0) throw ConfigError("alignment_noise must be >= 0");
    if (intent_ambiguity < 0.0 || intent_ambiguity > 1.0)
        throw ConfigError("intent_ambiguity must be in [0, 1]");
    if (img_h <= 0 || img_w <= 0 || img_c <= 0) throw ConfigError("bad image geometry");
    for (double p : intent_prior)
        if (p < 0.0 || p > 1.0) throw ConfigError("intent prior entries must be probabilities");
}

namespace {

struct PatternBank {
    // per-topic base grids and per-token overlay grids, all in [0,1) / [-.5,.5)
    std::vector<std::vector<double>> topic;
    std::vector<std::vector<double>> token;
};

PatternBank make_patterns(const SyntheticGenConfig& cfg) {
    PatternBank bank;
    const size_t cells = static_cast<size_t>(cfg.img_h) * cfg.img_w * cfg.img_c;
    std::mt19937_64 rng(derive_seed(cfg.seed, "patterns"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    bank.topic.resize(cfg.n_topics);
    for (auto& g : bank.topic) {
        g.resize(cells);
        for (double& v : g) v = u01(rng);
    }
    bank.token.resize(cfg.vocab_size);
    for (auto& g : bank.token) {
        g.resize(cells);
        for (double& v : g) v = u01(rng) - 0.5;
    }
    return bank;
}

// all unordered in-shard token pairs, shuffled; signatures are taken in
// order so they stay unique per (split, topic) until the supply wraps
std::vector<std::pair<int, int>> shuffled_pairs(const SyntheticGenConfig& cfg, int topic, uint64_t seed) {
    const int begin = cfg.shard_begin(topic);
    const int size = cfg.shard_size();
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<size_t>(size) * (size - 1) / 2);
    for (int a = 0; a < size; ++a)
        for (int b = a + 1; b < size; ++b) pairs.emplace_back(begin + a, begin + b);
    std::mt19937_64 rng(seed);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    return pairs;
}

int other_shard_token(const SyntheticGenConfig& cfg, int topic, std::mt19937_64& rng) {
    const int usable = cfg.shard_size() * cfg.n_topics;
    std::uniform_int_distribution<int> pick(0, usable - cfg.shard_size() - 1);
    int off = pick(rng);
    const int shard_lo = cfg.shard_begin(topic) - 1;  // offset into the usable range
    if (off >= shard_lo) off += cfg.shard_size();
    return 1 + off;
}

Dataset generate_split(const SyntheticGenConfig& cfg, const std::string& split_name, int count,
                       const PatternBank& bank) {
    Dataset out;
    out.examples.reserve(count);
    std::mt19937_64 rng(derive_seed(cfg.seed, "split:" + split_name));
    std::uniform_int_distribution<int> topic_dist(0, cfg.n_topics - 1);
    std::uniform_int_distribution<int> n_utt_dist(cfg.context_utterances_min, cfg.context_utterances_max);
    std::uniform_int_distribution<int> len_dist(cfg.utterance_len_min, cfg.utterance_len_max);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<std::pair<int, int>>> sig_pool(cfg.n_topics);
    std::vector<size_t> sig_next(cfg.n_topics, 0);
    for (int t = 0; t < cfg.n_topics; ++t)
        sig_pool[t] = shuffled_pairs(cfg, t, derive_seed(cfg.seed, "sig:" + split_name + ":" + std::to_string(t)));

    const size_t cells = static_cast<size_t>(cfg.img_h) * cfg.img_w * cfg.img_c;
    for (int i = 0; i < count; ++i) {
        DialogueExample ex;
        {
            std::ostringstream id;
            id << split_name << "_";
            id.fill('0');
            id.width(6);
            id << i;
            ex.id = id.str();
        }
        const int topic = topic_dist(rng);
        ex.topic = topic;
        const auto [sig_a, sig_b] = sig_pool[topic][sig_next[topic]++ % sig_pool[topic].size()];
        const int shard_lo = cfg.shard_begin(topic);
        std::uniform_int_distribution<int> shard_tok(shard_lo, shard_lo + cfg.shard_size() - 1);

        const int n_utt = n_utt_dist(rng);
        for (int u = 0; u < n_utt; ++u) {
            const int len = len_dist(rng);
            std::vector<int> utt(len);
            utt[0] = sig_a;
            utt[1] = sig_b;
            for (int k = 2; k < len; ++k) utt[k] = shard_tok(rng);
            // alignment noise: leak tokens from other topics
            for (int& tok : utt)
                if (u01(rng) < cfg.alignment_noise) tok = other_shard_token(cfg, topic, rng);
            ex.context.push_back(std::move(utt));
        }

        bool is_image = u01(rng) < cfg.prior_for_topic(topic);
        if (u01(rng) < cfg.intent_ambiguity) is_image = !is_image;
        ex.gold_modality = is_image ? Modality::Image : Modality::Text;

        if (is_image) {
            ImageResponse img;
            img.h = cfg.img_h;
            img.w = cfg.img_w;
            img.c = cfg.img_c;
            img.grid.resize(cells);
            const auto& base = bank.topic[topic];
            const auto& pa = bank.token[sig_a];
            const auto& pb = bank.token[sig_b];
            for (size_t k = 0; k < cells; ++k)
                img.grid[k] = 0.5 * base[k] + 0.25 * (pa[k] + pb[k]) + cfg.alignment_noise * gauss(rng);
            img.labels = {sig_a, sig_b};
            std::uniform_int_distribution<int> extra_dist(0, 2);
            const int extra = extra_dist(rng);
            for (int k = 0; k < extra; ++k) img.labels.push_back(shard_tok(rng));
            ex.image_response = std::move(img);
        } else {
            const int len = len_dist(rng);
            std::vector<int> resp(len);
            resp[0] = sig_a;
            resp[1] = sig_b;
            for (int k = 2; k < len; ++k) resp[k] = shard_tok(rng);
            ex.text_response = std::move(resp);
        }
        out.examples.push_back(std::move(ex));
    }
    return out;
}

}  // namespace

GeneratedData generate(const SyntheticGenConfig& config) {
    config.validate();
    const PatternBank bank = make_patterns(config);
    GeneratedData out;
    out.train = generate_split(config, "train", config.train_dialogues, bank);
    out.dev = generate_split(config, "dev", config.dev_dialogues, bank);
    out.test = generate_split(config, "test", config.test_dialogues, bank);
    return out;
}

Dataset prefix_augment(const Dataset& dataset) {
    Dataset out;
    for (const auto& ex : dataset.examples) {
        for (size_t len = 1; len <= ex.context.size(); ++len) {
            DialogueExample e = ex;
            e.context.assign(ex.context.begin(), ex.context.begin() + len);
            e.id = ex.id + "#p" + std::to_string(len);
            out.examples.push_back(std::move(e));
        }
    }
    return out;
}

CandidatePools build_pools(const Dataset& split, uint64_t seed, int pool_size, bool shared) {
    if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
    CandidatePools pools;
    pools.pool_size = pool_size;
    for (const auto& ex : split.examples) {
        if (ex.gold_modality == Modality::Text) {
            pools.text_index.emplace(ex.id, pools.text_ids.size());
            pools.text_ids.push_back(ex.id);
            pools.text_tokens.push_back(&*ex.text_response);
        } else {
            pools.image_index.emplace(ex.id, pools.image_ids.size());
            pools.image_ids.push_back(ex.id);
            pools.images.push_back(&*ex.image_response);
        }
    }
    const int n_text = static_cast<int>(pools.text_ids.size());
    const int n_image = static_cast<int>(pools.image_ids.size());
    if (n_text < pool_size || n_image < pool_size)
        throw DataError("split has " + std::to_string(n_text) + " text / " + std::to_string(n_image) +
                        " image responses; " + std::to_string(pool_size) + " of each required for pools");

    std::mt19937_64 rng(derive_seed(seed, "pools"));
    auto sample_ids = [&](const std::vector<std::string>& ids, const std::string& exclude, int want) {
        // seeded distinct sample via partial Fisher-Yates over index space
        std::vector<size_t> idx(ids.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::vector<std::string> picked;
        picked.reserve(want);
        size_t limit = idx.size();
        while (static_cast<int>(picked.size()) < want) {
            std::uniform_int_distribution<size_t> pick(0, limit - 1);
            size_t at = pick(rng);
            std::swap(idx[at], idx[limit - 1]);
            const std::string& id = ids[idx[--limit]];
            if (id != exclude) picked.push_back(id);
        }
        return picked;
    };

    if (shared) {
        const auto base_text = sample_ids(pools.text_ids, "", pool_size);
        const auto base_image = sample_ids(pools.image_ids, "", pool_size);
        auto with_gold = [&](const std::vector<std::string>& base, const std::string& gold) {
            if (std::find(base.begin(), base.end(), gold) != base.end()) return base;
            auto pool = base;
            pool.back() = gold;  // gold displaces the last slot
            return pool;
        };
        for (const auto& ex : split.examples) {
            PerExamplePool p;
            p.text_ids = ex.gold_modality == Modality::Text ? with_gold(base_text, ex.id) : base_text;
            p.image_ids = ex.gold_modality == Modality::Image ? with_gold(base_image, ex.id) : base_image;
            pools.by_example.push_back(std::move(p));
        }
        return pools;
    }

    for (const auto& ex : split.examples) {
        PerExamplePool p;
        if (ex.gold_modality == Modality::Text) {
            p.text_ids.push_back(ex.id);
            auto rest = sample_ids(pools.text_ids, ex.id, pool_size - 1);
            p.text_ids.insert(p.text_ids.end(), rest.begin(), rest.end());
            p.image_ids = sample_ids(pools.image_ids, "", pool_size);
        } else {
            p.image_ids.push_back(ex.id);
            auto rest = sample_ids(pools.image_ids, ex.id, pool_size - 1);
            p.image_ids.insert(p.image_ids.end(), rest.begin(), rest.end());
            p.text_ids = sample_ids(pools.text_ids, "", pool_size);
        }
        pools.by_example.push_back(std::move(p));
    }
    return pools;
}

std::vector<std::vector<size_t>> make_batches(const Dataset& dataset, Objective objective,
                                              int batch_size, uint64_t seed,
                                              std::optional<double> image_ratio) {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    std::vector<size_t> indices;
    for (size_t i = 0; i < dataset.examples.size(); ++i) {
        const Modality m = dataset.examples[i].gold_modality;
        if (objective == Objective::Text && m != Modality::Text) continue;
        if (objective == Objective::Image && m != Modality::Image) continue;
        indices.push_back(i);
    }
    if (indices.empty()) throw DataError("no examples left after filtering for this objective");

    std::mt19937_64 rng(derive_seed(seed, "batches"));

    if (objective == Objective::Joint && image_ratio.has_value()) {
        if (*image_ratio < 0.0 || *image_ratio > 1.0) throw ConfigError("image_ratio must be in [0, 1]");
        std::vector<size_t> text_idx, image_idx;
        for (size_t i : indices)
            (dataset.examples[i].gold_modality == Modality::Image ? image_idx : text_idx).push_back(i);
        if (text_idx.empty() || image_idx.empty())
            throw DataError("forced-ratio joint batches need both modalities present");
        std::shuffle(text_idx.begin(), text_idx.end(), rng);
        std::shuffle(image_idx.begin(), image_idx.end(), rng);
        const size_t n_batches = (indices.size() + batch_size - 1) / batch_size;
        std::vector<std::vector<size_t>> batches;
        size_t ti = 0, ii = 0, remaining = indices.size();
        for (size_t b = 0; b < n_batches; ++b) {
            const int bs = static_cast<int>(std::min<size_t>(batch_size, remaining));
            remaining -= bs;
            const int n_img = static_cast<int>(std::lround(*image_ratio * bs));
            std::vector<size_t> batch;
            for (int k = 0; k < n_img; ++k) batch.push_back(image_idx[ii++ % image_idx.size()]);
            for (int k = n_img; k < bs; ++k) batch.push_back(text_idx[ti++ % text_idx.size()]);
            batches.push_back(std::move(batch));
        }
        return batches;
    }

    std::shuffle(indices.begin(), indices.end(), rng);
    std::vector<std::vector<size_t>> batches;
    for (size_t at = 0; at < indices.size(); at += batch_size) {
        const size_t end = std::min(indices.size(), at + batch_size);
        batches.emplace_back(indices.begin() + at, indices.begin() + end);
    }
    return batches;
}

namespace {

json example_to_json(const DialogueExample& ex) {
    json j;
    j["id"] = ex.id;
    j["context"] = ex.context;
    j["gold_modality"] = modality_name(ex.gold_modality);
    if (ex.text_response) j["text_response"] = *ex.text_response;
    if (ex.image_response) {
        j["image_response"] = {
            {"dims", {ex.image_response->h, ex.image_response->w, ex.image_response->c}},
            {"grid", ex.image_response->grid},
            {"labels", ex.image_response->labels},
        };
    }
    if (ex.topic >= 0) j["topic"] = ex.topic;
    return j;
}

DialogueExample example_from_json(const json& j, size_t line_no) {
    auto fail = [line_no](const std::string& what) {
        throw DataError("line " + std::to_string(line_no) + ": " + what);
    };
    DialogueExample ex;
    if (!j.contains("id")) fail("missing id");
    if (!j.contains("context")) fail("missing context");
    if (!j.contains("gold_modality")) fail("missing gold_modality");
    ex.id = j.at("id").get<std::string>();
    ex.context = j.at("context").get<std::vector<std::vector<int>>>();
    ex.gold_modality = modality_from_name(j.at("gold_modality").get<std::string>());
    if (j.contains("text_response") && j.contains("image_response"))
        fail("both text_response and image_response present");
    if (ex.gold_modality == Modality::Text) {
        if (!j.contains("text_response")) fail("gold_modality text but no text_response");
        ex.text_response = j.at("text_response").get<std::vector<int>>();
    } else {
        if (!j.contains("image_response")) fail("gold_modality image but no image_response");
        const json& ji = j.at("image_response");
        ImageResponse img;
        const auto dims = ji.at("dims").get<std::vector<int>>();
        if (dims.size() != 3) fail("image dims must be [h, w, c]");
        img.h = dims[0];
        img.w = dims[1];
        img.c = dims[2];
        img.grid = ji.at("grid").get<std::vector<double>>();
        img.labels = ji.at("labels").get<std::vector<int>>();
        if (img.grid.size() != static_cast<size_t>(img.h) * img.w * img.c)
            fail("image grid size does not match dims");
        if (img.labels.empty()) fail("image response without labels");
        ex.image_response = std::move(img);
    }
    ex.topic = j.value("topic", -1);
    return ex;
}

}  // namespace

void save_jsonl(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const auto& ex : dataset.examples) out << example_to_json(ex).dump() << "\n";
    if (!out) throw DataError("write failure on '" + path + "'");
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    Dataset out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw DataError("line " + std::to_string(line_no) + ": malformed JSON");
        out.examples.push_back(example_from_json(j, line_no));
    }
    return out;
}

}  // namespace mmret
