#include "mmret/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace mmret {

using nlohmann::json;

std::string protocol_name(Protocol p) {
    switch (p) {
        case Protocol::Text: return "text";
        case Protocol::Image: return "image";
        case Protocol::Multimodal: return "multimodal";
    }
    throw StructureError("unreachable protocol");
}

Protocol protocol_from_name(const std::string& s) {
    if (s == "text") return Protocol::Text;
    if (s == "image") return Protocol::Image;
    if (s == "multimodal") return Protocol::Multimodal;
    throw ConfigError("unknown protocol '" + s + "' (expected text|image|multimodal)");
}

int recall_at_k(const std::vector<std::string>& ranked_ids, const std::string& gold_id, int k) {
    if (k < 1) throw ConfigError("recall_at_k needs k >= 1");
    const size_t limit = std::min<size_t>(k, ranked_ids.size());
    for (size_t i = 0; i < limit; ++i)
        if (ranked_ids[i] == gold_id) return 1;
    return 0;
}

std::string EvalReport::to_json() const {
    json j;
    for (const auto& [name, r] : protocols)
        j["protocols"][name] = {{"r_at_1", r.r1}, {"r_at_5", r.r5}, {"r_at_10", r.r10}};
    j["counts"] = counts;
    if (intent_accuracy) j["intent_accuracy"] = *intent_accuracy;
    j["cascade_misses"] = cascade_misses;
    return j.dump();
}

EvalReport EvalReport::from_json(const std::string& text) {
    json j = json::parse(text);
    EvalReport r;
    if (j.contains("protocols"))
        for (const auto& [name, v] : j.at("protocols").items())
            r.protocols[name] = {v.at("r_at_1").get<double>(), v.at("r_at_5").get<double>(),
                                 v.at("r_at_10").get<double>()};
    if (j.contains("counts")) r.counts = j.at("counts").get<std::map<std::string, int>>();
    if (j.contains("intent_accuracy")) r.intent_accuracy = j.at("intent_accuracy").get<double>();
    r.cascade_misses = j.value("cascade_misses", 0);
    return r;
}

std::string EvalReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(22) << "Protocol" << std::right << std::setw(9) << "R@1"
       << std::setw(9) << "R@5" << std::setw(9) << "R@10" << std::setw(8) << "n" << "\n";
    auto row = [&](const std::string& label, const std::string& key) {
        auto it = protocols.find(key);
        if (it == protocols.end()) return;
        os << std::left << std::setw(22) << label << std::right << std::fixed << std::setprecision(4)
           << std::setw(9) << it->second.r1 << std::setw(9) << it->second.r5 << std::setw(9) << it->second.r10;
        auto cit = counts.find(key);
        os << std::setw(8) << (cit == counts.end() ? 0 : cit->second) << "\n";
    };
    row("Text Retrieval", "text");
    row("Image Retrieval", "image");
    row("Multimodal Retrieval", "multimodal");
    if (intent_accuracy)
        os << "Intent accuracy: " << std::fixed << std::setprecision(4) << *intent_accuracy
           << "  (cascade misses: " << cascade_misses << ")\n";
    return os.str();
}

namespace {

struct ExampleOutcome {
    int text_hit1 = 0, text_hit5 = 0, text_hit10 = 0;
    int image_hit1 = 0, image_hit5 = 0, image_hit10 = 0;
    int mm_hit1 = 0, mm_hit5 = 0, mm_hit10 = 0;
    int intent_correct = 0;
    int cascade_miss = 0;
};

struct EmbeddingCache {
    // index-aligned with pools' global stores
    std::vector<std::vector<double>> text;
    std::vector<std::vector<double>> image;
};

int eval_thread_count(int requested) {
    if (requested > 1) return requested;
    if (const char* env = std::getenv("MMRET_EVAL_THREADS")) {
        const int n = std::atoi(env);
        if (n > 1) return n;
    }
    return 1;
}

template <typename Fn>
void parallel_indexed(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const size_t workers = std::min<size_t>(threads, n);
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (size_t i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

void rank_from_cache(const std::vector<double>& ctx_emb, const EmbeddingCache& cache,
                     const CandidatePools& pools, const std::vector<std::string>& ids, Modality m,
                     std::vector<std::string>& out_ranked) {
    EmbeddedPool pool;
    pool.ids = ids;
    pool.embs.reserve(ids.size());
    for (const auto& id : ids) {
        if (m == Modality::Text)
            pool.embs.push_back(cache.text[pools.text_index.at(id)]);
        else
            pool.embs.push_back(cache.image[pools.image_index.at(id)]);
    }
    auto ranked = rank_pool(ctx_emb, pool, m);
    out_ranked.clear();
    for (const auto& r : ranked) out_ranked.push_back(r.id);
}

}  // namespace

EvalReport evaluate(const ModelBundle& bundle, const Dataset& split, const CandidatePools& pools,
                    const EvalOptions& options) {
    if (pools.by_example.size() != split.examples.size())
        throw DataError("pools were built for a different split (size mismatch)");
    const bool want_text = options.protocols.count(Protocol::Text) > 0;
    const bool want_image = options.protocols.count(Protocol::Image) > 0;
    const bool want_mm = options.protocols.count(Protocol::Multimodal) > 0;
    const int threads = eval_thread_count(options.threads);

    // Embed every candidate in the split store once.
    EmbeddingCache cache;
    cache.text.resize(pools.text_ids.size());
    cache.image.resize(pools.image_ids.size());
    FwdCtx eval_ctx;
    parallel_indexed(pools.text_ids.size(), threads, [&](size_t i) {
        cache.text[i] = *encode_text_response(*bundle.ctx_text, *pools.text_tokens[i], eval_ctx).data;
    });
    parallel_indexed(pools.image_ids.size(), threads, [&](size_t i) {
        cache.image[i] = *encode_image_response(*bundle.image_encoder, *pools.images[i], eval_ctx).data;
    });

    const size_t n = split.examples.size();
    std::vector<ExampleOutcome> outcomes(n);
    parallel_indexed(n, threads, [&](size_t i) {
        const DialogueExample& ex = split.examples[i];
        const PerExamplePool& pool = pools.by_example[i];
        ExampleOutcome& o = outcomes[i];
        std::vector<std::string> ranked;

        if (want_text && ex.gold_modality == Modality::Text) {
            rank_from_cache(embed_context_eval(*bundle.ctx_text, ex.context), cache, pools,
                            pool.text_ids, Modality::Text, ranked);
            o.text_hit1 = recall_at_k(ranked, ex.id, 1);
            o.text_hit5 = recall_at_k(ranked, ex.id, 5);
            o.text_hit10 = recall_at_k(ranked, ex.id, 10);
        }
        if (want_image && ex.gold_modality == Modality::Image) {
            rank_from_cache(embed_context_eval(*bundle.ctx_image, ex.context), cache, pools,
                            pool.image_ids, Modality::Image, ranked);
            o.image_hit1 = recall_at_k(ranked, ex.id, 1);
            o.image_hit5 = recall_at_k(ranked, ex.id, 5);
            o.image_hit10 = recall_at_k(ranked, ex.id, 10);
        }
        if (want_mm) {
            if (bundle.gated()) {
                const double p_image = intent_probability(bundle, ex.context);
                const Modality predicted = p_image > 0.5 ? Modality::Image : Modality::Text;
                o.intent_correct = predicted == ex.gold_modality ? 1 : 0;
                if (!o.intent_correct) {
                    o.cascade_miss = 1;  // gold unreachable: zero at every k
                } else if (predicted == Modality::Text) {
                    rank_from_cache(embed_context_eval(*bundle.ctx_text, ex.context), cache, pools,
                                    pool.text_ids, Modality::Text, ranked);
                    o.mm_hit1 = recall_at_k(ranked, ex.id, 1);
                    o.mm_hit5 = recall_at_k(ranked, ex.id, 5);
                    o.mm_hit10 = recall_at_k(ranked, ex.id, 10);
                } else {
                    rank_from_cache(embed_context_eval(*bundle.ctx_image, ex.context), cache, pools,
                                    pool.image_ids, Modality::Image, ranked);
                    o.mm_hit1 = recall_at_k(ranked, ex.id, 1);
                    o.mm_hit5 = recall_at_k(ranked, ex.id, 5);
                    o.mm_hit10 = recall_at_k(ranked, ex.id, 10);
                }
            } else {
                const std::vector<double> ctx_emb = embed_context_eval(*bundle.ctx_text, ex.context);
                EmbeddedPool tp, ip;
                tp.ids = pool.text_ids;
                for (const auto& id : pool.text_ids) tp.embs.push_back(cache.text[pools.text_index.at(id)]);
                ip.ids = pool.image_ids;
                for (const auto& id : pool.image_ids) ip.embs.push_back(cache.image[pools.image_index.at(id)]);
                auto ranked_union = rank_union(ctx_emb, ctx_emb, tp, ip);
                std::vector<std::string> ids;
                ids.reserve(ranked_union.size());
                for (const auto& r : ranked_union) ids.push_back(r.id);
                o.mm_hit1 = recall_at_k(ids, ex.id, 1);
                o.mm_hit5 = recall_at_k(ids, ex.id, 5);
                o.mm_hit10 = recall_at_k(ids, ex.id, 10);
            }
        }
    });

    // index-ordered reduction keeps the report bitwise deterministic
    EvalReport report;
    int n_text = 0, n_image = 0;
    long t1 = 0, t5 = 0, t10 = 0, i1 = 0, i5 = 0, i10 = 0, m1 = 0, m5 = 0, m10 = 0;
    long intent_ok = 0, cascade = 0;
    for (size_t i = 0; i < n; ++i) {
        const auto& o = outcomes[i];
        const bool is_text = split.examples[i].gold_modality == Modality::Text;
        n_text += is_text;
        n_image += !is_text;
        t1 += o.text_hit1; t5 += o.text_hit5; t10 += o.text_hit10;
        i1 += o.image_hit1; i5 += o.image_hit5; i10 += o.image_hit10;
        m1 += o.mm_hit1; m5 += o.mm_hit5; m10 += o.mm_hit10;
        intent_ok += o.intent_correct;
        cascade += o.cascade_miss;
    }
    if (want_text && n_text > 0) {
        report.protocols["text"] = {double(t1) / n_text, double(t5) / n_text, double(t10) / n_text};
        report.counts["text"] = n_text;
    }
    if (want_image && n_image > 0) {
        report.protocols["image"] = {double(i1) / n_image, double(i5) / n_image, double(i10) / n_image};
        report.counts["image"] = n_image;
    }
    if (want_mm && n > 0) {
        report.protocols["multimodal"] = {double(m1) / n, double(m5) / n, double(m10) / n};
        report.counts["multimodal"] = static_cast<int>(n);
        if (bundle.gated()) {
            report.intent_accuracy = double(intent_ok) / n;
            report.cascade_misses = static_cast<int>(cascade);
            // a multimodal hit requires a correct intent decision
            if (m1 > intent_ok || m5 > intent_ok || m10 > intent_ok)
                throw StructureError("cascade invariant violated: multimodal recall exceeds intent accuracy");
        }
    }
    return report;
}

namespace {

std::array<double, 3> triple_key(const EvalReport& r, const std::string& key) {
    auto it = r.protocols.find(key);
    if (it == r.protocols.end()) return {-1.0, -1.0, -1.0};
    return {it->second.r1, it->second.r5, it->second.r10};
}

size_t select_best(const std::vector<CheckpointRecord>& trail,
                   const std::function<std::array<double, 3>(const EvalReport&)>& key) {
    if (trail.empty()) throw DataError("empty checkpoint trail");
    size_t best = 0;
    std::array<double, 3> best_key = key(trail[0].report);
    for (size_t i = 1; i < trail.size(); ++i) {
        const auto k = key(trail[i].report);
        if (k > best_key) {  // lexicographic; earliest step wins ties
            best = i;
            best_key = k;
        }
    }
    return best;
}

}  // namespace

size_t select_checkpoint(const std::vector<CheckpointRecord>& trail) {
    return select_best(trail, [](const EvalReport& r) { return triple_key(r, "multimodal"); });
}

size_t select_by_intent_accuracy(const std::vector<CheckpointRecord>& trail) {
    return select_best(trail, [](const EvalReport& r) {
        return std::array<double, 3>{r.intent_accuracy.value_or(-1.0), 0.0, 0.0};
    });
}

size_t select_by_protocol_r1(const std::vector<CheckpointRecord>& trail, Protocol protocol) {
    const std::string key = protocol_name(protocol);
    return select_best(trail, [key](const EvalReport& r) { return triple_key(r, key); });
}

}  // namespace mmret
