#pragma once

#include "hmrn/evaluation.hpp"
#include "hmrn/vocabulary.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <unordered_map>

namespace hmrn {

// Errors carrying the HTTP status they map to.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& msg) : Error(msg), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline ServiceError not_found(const std::string& msg) { return ServiceError(404, msg); }
inline ServiceError bad_request(const std::string& msg) { return ServiceError(400, msg); }

// The checkpoints a service scores with. Either member may be absent, which
// restricts the score modes sessions can use.
struct ServiceModels {
  std::shared_ptr<const Checkpoint> it, ti;
  std::string checkpoint_hash;

  RetrievalModels models() const { return {it ? &it->model : nullptr, ti ? &ti->model : nullptr}; }

  bool supports(ScoreMode mode) const {
    try {
      models().check(mode);
      return true;
    } catch (const Error&) {
      return false;
    }
  }
};

inline std::shared_ptr<const ServiceModels> make_service_models(std::optional<Checkpoint> it,
                                                                std::optional<Checkpoint> ti) {
  require(it || ti, "service needs at least one checkpoint");
  auto s = std::make_shared<ServiceModels>();
  if (it) {
    require(it->model.uses_it(), "--checkpoint-it must hold an image-text or joint model");
    s->it = std::make_shared<const Checkpoint>(std::move(*it));
  }
  if (ti) {
    require(ti->model.uses_ti(), "--checkpoint-ti must hold a text-image or joint model");
    s->ti = std::make_shared<const Checkpoint>(std::move(*ti));
  }
  if (s->it && s->ti) {
    require(s->it->vocab_hash == s->ti->vocab_hash, "checkpoints were trained with different vocabularies");
    Fnv1a h;
    h.update(s->it->hash() + ":" + s->ti->hash());
    s->checkpoint_hash = hex64(h.digest());
  } else {
    s->checkpoint_hash = (s->it ? s->it : s->ti)->hash();
  }
  return s;
}

// Schematic SVG of an image's region boxes, for galleries without pictures.
inline std::string render_region_svg(const RegionFeatureSet& regions) {
  double w = 640, h = 480;
  for (const auto& b : regions.boxes) {
    w = std::max(w, b.x + b.w);
    h = std::max(h, b.y + b.h);
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << w << ' ' << h << "\" width=\"" << w
     << "\" height=\"" << h << "\">"
     << "<rect width=\"100%\" height=\"100%\" fill=\"#f4f4f4\"/>";
  for (std::size_t i = 0; i < regions.boxes.size(); ++i) {
    const auto& b = regions.boxes[i];
    os << "<rect x=\"" << b.x << "\" y=\"" << b.y << "\" width=\"" << b.w << "\" height=\"" << b.h
       << "\" fill=\"none\" stroke=\"#555\" stroke-width=\"2\"/>"
       << "<text x=\"" << b.x + 4 << "\" y=\"" << b.y + 16 << "\" font-size=\"14\" fill=\"#333\">" << i
       << "</text>";
  }
  os << "</svg>";
  return os.str();
}

// A gallery plus its encoder outputs for the current checkpoints.
struct GalleryIndex {
  std::string id;
  Dataset data;
  std::unordered_map<std::string, std::size_t> position;  // image_id -> record index
  std::vector<std::string> thumbnails;                    // SVG per record

  // Rebuilt whenever the checkpoint hash differs from `encoded_for`.
  std::shared_ptr<const GalleryEncoding> encoding;
  std::string encoded_for;
  mutable std::mutex mu;

  std::shared_ptr<const GalleryEncoding> encoding_for(const ServiceModels& m) {
    std::lock_guard lock(mu);
    if (!encoding || encoded_for != m.checkpoint_hash) {
      encoding = std::make_shared<const GalleryEncoding>(encode_gallery(data, m.models()));
      encoded_for = m.checkpoint_hash;
    }
    return encoding;
  }
};

struct SessionQuery {
  std::string text;
  std::vector<TokenId> ids;
};

struct Session {
  std::string id;
  std::string gallery_id;
  ScoreMode mode = ScoreMode::Ensemble;
  std::vector<SessionQuery> queries;
  // rankings[r-1] is the ranking after r queries; valid for `ranked_for`.
  std::vector<RoundRanking> rankings;
  std::string ranked_for;
  std::chrono::system_clock::time_point created, updated;
  std::size_t recomputations = 0;  // number of ranking computations performed
  mutable std::mutex mu;

  std::size_t round() const { return queries.size(); }
};

inline std::string iso_time(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Session-based multi-round retrieval over in-memory galleries. Sessions are
// independent; mutations of one session are serialized by its own mutex.
class RetrievalService {
 public:
  static constexpr std::size_t kDefaultTopK = 12;

  RetrievalService(std::shared_ptr<const ServiceModels> models, Vocabulary vocab)
      : models_(std::move(models)), vocab_(std::move(vocab)) {
    require(models_ != nullptr, "service needs checkpoints");
    check_vocab(*models_);
  }

  // Swaps the checkpoints; gallery encodings and cached rankings are
  // rebuilt lazily on next use.
  void set_models(std::shared_ptr<const ServiceModels> models) {
    require(models != nullptr, "service needs checkpoints");
    check_vocab(*models);
    std::unique_lock lock(models_mu_);
    models_ = std::move(models);
  }

  std::shared_ptr<const ServiceModels> models() const {
    std::shared_lock lock(models_mu_);
    return models_;
  }

  const Vocabulary& vocabulary() const { return vocab_; }

  // ---- galleries ---------------------------------------------------------

  void register_gallery(const std::string& id, const std::string& manifest_path) {
    std::unique_lock lock(galleries_mu_);
    gallery_paths_[id] = manifest_path;
  }

  nlohmann::json load_gallery(const std::string& id, const std::string& manifest_path = {}) {
    std::string path = manifest_path;
    if (path.empty()) {
      std::shared_lock lock(galleries_mu_);
      auto it = gallery_paths_.find(id);
      if (it == gallery_paths_.end()) throw not_found("unknown gallery: " + id + " (no manifest registered)");
      path = it->second;
    }
    Dataset data;
    try {
      data = load_dataset(path, vocab_);
    } catch (const Error& e) {
      throw bad_request(std::string("cannot load gallery ") + id + ": " + e.what());
    }
    return add_gallery(id, std::move(data));
  }

  nlohmann::json add_gallery(const std::string& id, Dataset data) {
    if (id.empty()) throw bad_request("gallery id must be nonempty");
    if (data.records.empty()) throw bad_request("gallery " + id + " is empty");
    auto g = std::make_shared<GalleryIndex>();
    g->id = id;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      const auto& img = data.records[i].regions.image_id;
      if (!g->position.emplace(img, i).second) throw bad_request("gallery " + id + " repeats image id " + img);
      g->thumbnails.push_back(render_region_svg(data.records[i].regions));
    }
    g->data = std::move(data);
    const auto m = models();
    g->encoding_for(*m);
    {
      std::unique_lock lock(galleries_mu_);
      galleries_[id] = g;
    }
    return {{"gallery_id", id}, {"size", g->data.size()}, {"checkpoint_hash", m->checkpoint_hash}, {"round", 0}};
  }

  std::shared_ptr<GalleryIndex> gallery(const std::string& id) const {
    std::shared_lock lock(galleries_mu_);
    auto it = galleries_.find(id);
    if (it == galleries_.end()) throw not_found("unknown gallery: " + id);
    return it->second;
  }

  std::string thumbnail(const std::string& gallery_id, const std::string& image_id) const {
    auto g = gallery(gallery_id);
    auto it = g->position.find(image_id);
    if (it == g->position.end()) throw not_found("image " + image_id + " is not in gallery " + gallery_id);
    return g->thumbnails[it->second];
  }

  // ---- sessions ----------------------------------------------------------

  nlohmann::json create_session(const std::string& gallery_id, ScoreMode mode = ScoreMode::Ensemble) {
    gallery(gallery_id);  // must exist
    const auto m = models();
    if (!m->supports(mode))
      throw bad_request("score mode " + to_string(mode) + " is not available with the loaded checkpoints");
    auto s = std::make_shared<Session>();
    s->gallery_id = gallery_id;
    s->mode = mode;
    s->created = s->updated = std::chrono::system_clock::now();
    {
      std::unique_lock lock(sessions_mu_);
      do {
        s->id = new_session_id();
      } while (sessions_.count(s->id));
      sessions_[s->id] = s;
    }
    std::lock_guard lock(s->mu);
    return session_json(*s, *m, kDefaultTopK);
  }

  nlohmann::json add_query(const std::string& session_id, const std::string& text,
                           std::size_t k = kDefaultTopK) {
    auto s = session(session_id);
    TokenizedQuery q;
    try {
      q = tokenize_query(text, vocab_);
    } catch (const Error& e) {
      throw bad_request(e.what());
    }
    const auto m = models();
    std::lock_guard lock(s->mu);
    s->queries.push_back({text, std::move(q.ids)});
    s->updated = std::chrono::system_clock::now();
    refresh(*s, *m);
    return session_json(*s, *m, k);
  }

  nlohmann::json remove_query(const std::string& session_id, std::size_t index, std::size_t k = kDefaultTopK) {
    auto s = session(session_id);
    const auto m = models();
    std::lock_guard lock(s->mu);
    if (index >= s->queries.size())
      throw not_found("session " + session_id + " has no query " + std::to_string(index));
    s->queries.erase(s->queries.begin() + static_cast<std::ptrdiff_t>(index));
    // Rounds before the removed query keep their query prefix.
    if (s->rankings.size() > index) s->rankings.resize(index);
    s->updated = std::chrono::system_clock::now();
    refresh(*s, *m);
    return session_json(*s, *m, k);
  }

  nlohmann::json get_ranking(const std::string& session_id, std::size_t k = kDefaultTopK) {
    auto s = session(session_id);
    const auto m = models();
    std::lock_guard lock(s->mu);
    refresh(*s, *m);  // no-op unless the checkpoints changed
    return session_json(*s, *m, k);
  }

  // Full ranking for the session's current round (empty at round 0).
  RoundRanking current_ranking(const std::string& session_id) {
    auto s = session(session_id);
    const auto m = models();
    std::lock_guard lock(s->mu);
    refresh(*s, *m);
    return s->queries.empty() ? RoundRanking{} : s->rankings.back();
  }

  std::size_t recomputations(const std::string& session_id) const {
    auto s = session(session_id);
    std::lock_guard lock(s->mu);
    return s->recomputations;
  }

  // Per-query attention of `image_id`'s regions for the current round.
  // ensemble/ti sessions report the text-image model's attention of each
  // query over regions; it sessions report the image-text model's
  // projection weights over regions.
  nlohmann::json explain(const std::string& session_id, const std::string& image_id) {
    auto s = session(session_id);
    const auto m = models();
    std::lock_guard lock(s->mu);
    if (s->queries.empty()) throw bad_request("session " + session_id + " has no queries to explain");
    auto g = gallery(s->gallery_id);
    auto pos = g->position.find(image_id);
    if (pos == g->position.end()) throw not_found("image " + image_id + " is not in gallery " + s->gallery_id);
    refresh(*s, *m);
    const auto enc = g->encoding_for(*m);
    const auto rm = m->models();
    const bool use_ti = s->mode != ScoreMode::ImageText;
    const Model& model = use_ti ? *rm.ti : *rm.it;
    const ImageEncoding& img = use_ti ? enc->ti[pos->second] : enc->it[pos->second];

    std::vector<std::vector<TokenId>> ids;
    for (const auto& q : s->queries) ids.push_back(q.ids);
    const Matrix T = encode_query_rows(ids, model.params);
    const CosineResult cos = cosine_matrix(img.V_loc, T);
    Matrix weights;  // K x N, column j = weights of query j over regions
    if (use_ti) {
      weights = local_similarity_ti(cos.S, model.config.lambda2).alpha.transpose();
    } else {
      weights = project_visual(cos.S, img.V_loc, model.config.lambda2).A;
    }

    const auto& rec = g->data.records[pos->second];
    nlohmann::json queries = nlohmann::json::array();
    for (Index j = 0; j < T.rows(); ++j) {
      Index top = 0;
      weights.col(j).maxCoeff(&top);
      nlohmann::json q{{"index", j},
                       {"text", s->queries[static_cast<std::size_t>(j)].text},
                       {"weights", std::vector<double>(weights.col(j).data(), weights.col(j).data() + weights.rows())},
                       {"cosine", std::vector<double>(cos.S.col(j).data(), cos.S.col(j).data() + cos.S.rows())},
                       {"top_region", top},
                       {"top_weight", weights(top, j)}};
      if (static_cast<std::size_t>(top) < rec.regions.boxes.size()) {
        const Box& b = rec.regions.boxes[static_cast<std::size_t>(top)];
        q["box"] = {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}};
      } else {
        q["box"] = nullptr;
      }
      queries.push_back(std::move(q));
    }
    const auto& ranking = s->rankings.back();
    double score = 0;
    std::size_t rank = 0;
    for (std::size_t i = 0; i < ranking.ranked_ids.size(); ++i)
      if (ranking.ranked_ids[i] == image_id) {
        score = ranking.ranked_scores[i];
        rank = i + 1;
      }
    return {{"session_id", s->id},
            {"image_id", image_id},
            {"checkpoint_hash", m->checkpoint_hash},
            {"round", s->round()},
            {"mode", to_string(s->mode)},
            {"attention", use_ti ? "text-image cross attention" : "image-text projection"},
            {"score", score},
            {"rank", rank},
            {"num_regions", img.V_loc.rows()},
            {"queries", std::move(queries)}};
  }

  nlohmann::json health() const {
    const auto m = models();
    std::size_t galleries = 0, sessions = 0;
    {
      std::shared_lock lock(galleries_mu_);
      galleries = galleries_.size();
    }
    {
      std::shared_lock lock(sessions_mu_);
      sessions = sessions_.size();
    }
    return {{"status", "ok"},
            {"checkpoint_hash", m->checkpoint_hash},
            {"round", 0},
            {"galleries", galleries},
            {"sessions", sessions},
            {"modes",
             [&] {
               nlohmann::json a = nlohmann::json::array();
               for (auto mode : {ScoreMode::ImageText, ScoreMode::TextImage, ScoreMode::Ensemble})
                 if (m->supports(mode)) a.push_back(to_string(mode));
               return a;
             }()}};
  }

 private:
  void check_vocab(const ServiceModels& m) const {
    for (const auto* ck : {m.it.get(), m.ti.get()})
      if (ck)
        require(ck->vocab_hash == vocab_.hash(), "vocabulary does not match the checkpoint (hash " +
                                                     hex64(vocab_.hash()) + " vs " + hex64(ck->vocab_hash) + ")");
  }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::shared_lock lock(sessions_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw not_found("unknown session: " + id);
    return it->second;
  }

  std::string new_session_id() {
    std::lock_guard lock(rng_mu_);
    return hex64(rng_());
  }

  // Brings cached rankings up to the current round. Caller holds s.mu.
  void refresh(Session& s, const ServiceModels& m) {
    if (s.ranked_for != m.checkpoint_hash) {
      s.rankings.clear();
      s.ranked_for = m.checkpoint_hash;
    }
    if (s.rankings.size() > s.round()) s.rankings.resize(s.round());
    if (s.rankings.size() == s.round()) return;
    auto g = gallery(s.gallery_id);
    const auto enc = g->encoding_for(m);
    std::vector<std::vector<TokenId>> ids;
    for (const auto& q : s.queries) ids.push_back(q.ids);
    for (std::size_t r = s.rankings.size() + 1; r <= s.round(); ++r) {
      s.rankings.push_back(rank_gallery(ids, r, *enc, m.models(), s.mode));
      ++s.recomputations;
    }
  }

  nlohmann::json session_json(const Session& s, const ServiceModels& m, std::size_t k) const {
    nlohmann::json ranking = nlohmann::json::array();
    if (!s.queries.empty()) {
      const auto& r = s.rankings.back();
      const std::size_t n = std::min(k, r.ranked_ids.size());
      for (std::size_t i = 0; i < n; ++i)
        ranking.push_back({{"rank", i + 1}, {"image_id", r.ranked_ids[i]}, {"score", r.ranked_scores[i]}});
    }
    nlohmann::json queries = nlohmann::json::array();
    for (std::size_t i = 0; i < s.queries.size(); ++i)
      queries.push_back({{"index", i}, {"text", s.queries[i].text}, {"tokens", detokenize(s.queries[i].ids, vocab_)}});
    return {{"session_id", s.id},
            {"gallery_id", s.gallery_id},
            {"mode", to_string(s.mode)},
            {"checkpoint_hash", m.checkpoint_hash},
            {"round", s.round()},
            {"queries", std::move(queries)},
            {"ranking", std::move(ranking)},
            {"created", iso_time(s.created)},
            {"updated", iso_time(s.updated)}};
  }

  mutable std::shared_mutex models_mu_;
  std::shared_ptr<const ServiceModels> models_;
  Vocabulary vocab_;

  mutable std::shared_mutex galleries_mu_;
  std::unordered_map<std::string, std::shared_ptr<GalleryIndex>> galleries_;
  std::unordered_map<std::string, std::string> gallery_paths_;

  mutable std::shared_mutex sessions_mu_;
  std::unordered_map<std::string, std::shared_ptr<Session>> sessions_;

  std::mutex rng_mu_;
  std::mt19937_64 rng_{std::random_device{}()};
};

}  // namespace hmrn
