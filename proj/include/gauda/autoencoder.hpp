#pragma once
// Separate image and mask autoencoders with an optional vector-quantisation
// bottleneck. The image branch is trained with MSE, the mask branch with
// per-pixel cross-entropy; together they map a PairedSample to a latent pair
// and back.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gauda/log.hpp"
#include "gauda/nn.hpp"
#include "gauda/rng.hpp"
#include "gauda/sample.hpp"
#include "gauda/serialize.hpp"
#include "gauda/tape.hpp"
#include "gauda/tensor.hpp"

namespace gauda {

struct PairedLatent {
  Tensor z_x;  // [d_lat]
  Tensor z_m;  // [d_lat]

  Tensor joined() const {
    std::vector<double> v(z_x.data().begin(), z_x.data().end());
    v.insert(v.end(), z_m.data().begin(), z_m.data().end());
    return Tensor::vector(std::move(v));
  }
};

struct Codebook {
  Tensor entries;  // V × d_code
  double commitment = 0.25;

  std::size_t size() const { return entries.empty() ? 0 : entries.rows(); }
  std::size_t code_dim() const { return entries.cols(); }

  /// Number of entry pairs that are bitwise identical (collapse indicator).
  std::size_t duplicate_pairs() const {
    std::size_t dup = 0;
    for (std::size_t a = 0; a < size(); ++a)
      for (std::size_t b = a + 1; b < size(); ++b)
        if (std::equal(entries.row_span(a).begin(), entries.row_span(a).end(), entries.row_span(b).begin())) ++dup;
    return dup;
  }
};

struct Quantized {
  Tensor zq;                         // same shape as z
  std::vector<std::size_t> indices;  // one per code_dim-sized chunk, row-major
  double codebook_loss = 0.0;        // mean ||sg(z) - e||²
  double commitment_loss = 0.0;      // commitment · mean ||z - sg(e)||²
};

/// Nearest-entry lookup for every consecutive code_dim-chunk of each row of z.
/// Ties go to the lowest index.
inline Quantized quantize(const Tensor& z, const Codebook& book) {
  if (book.size() == 0) throw std::invalid_argument("quantize: empty codebook");
  const std::size_t d = book.code_dim();
  if (z.size() % d != 0) throw std::invalid_argument("quantize: code dimension must divide the latent length");
  Quantized q{z, {}, 0.0, 0.0};
  const std::size_t chunks = z.size() / d;
  q.indices.resize(chunks);
  double sq = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const double* v = z.data().data() + c * d;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < book.size(); ++e) {
      auto row = book.entries.row_span(e);
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (v[j] - row[j]) * (v[j] - row[j]);
      if (dist < best_d) {
        best_d = dist;
        best = e;
      }
    }
    q.indices[c] = best;
    auto row = book.entries.row_span(best);
    std::copy(row.begin(), row.end(), q.zq.data().begin() + static_cast<std::ptrdiff_t>(c * d));
    sq += best_d;
  }
  q.codebook_loss = sq / static_cast<double>(z.size());
  q.commitment_loss = book.commitment * q.codebook_loss;
  return q;
}

struct AutoencoderConfig {
  std::size_t latent_dim = 16;
  std::size_t hidden = 256;
  bool vq = true;
  std::size_t codebook_size = 64;
  std::size_t code_dim = 2;
  double commitment = 0.25;
  std::size_t steps = 8000;
  std::size_t batch = 64;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  double vq_warmup = 0.3;  // fraction of steps trained without quantisation before codebook init
};

inline void to_json(nlohmann::json& j, const AutoencoderConfig& c) {
  j = nlohmann::json{{"latent_dim", c.latent_dim}, {"hidden", c.hidden},   {"vq", c.vq},
                     {"codebook_size", c.codebook_size}, {"code_dim", c.code_dim}, {"commitment", c.commitment},
                     {"steps", c.steps},           {"batch", c.batch},     {"lr", c.lr},
                     {"weight_decay", c.weight_decay}, {"vq_warmup", c.vq_warmup}};
}
inline void from_json(const nlohmann::json& j, AutoencoderConfig& c) {
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.vq = j.value("vq", c.vq);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.commitment = j.value("commitment", c.commitment);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.vq_warmup = j.value("vq_warmup", c.vq_warmup);
}

/// Geometry of the paired data the autoencoder is built for.
struct PairGeometry {
  std::size_t channels = 1;
  std::size_t classes = 4;
  std::size_t height = 8;
  std::size_t width = 8;

  std::size_t pixels() const { return height * width; }
  std::size_t image_dims() const { return channels * pixels(); }
  std::size_t mask_dims() const { return classes * pixels(); }
};

class PairedAutoencoder {
 public:
  PairedAutoencoder() = default;

  PairedAutoencoder(PairGeometry geo, AutoencoderConfig cfg, RngStream& rng) : geo_(geo), cfg_(cfg) {
    const std::size_t d = cfg_.latent_dim;
    if (d == 0) throw std::invalid_argument("latent dimension must be positive");
    if (compression_ratio() <= 1.0)
      throw std::invalid_argument("latent pair (2×" + std::to_string(d) + ") does not compress the " +
                                  std::to_string(geo_.image_dims() + geo_.mask_dims()) + "-dim input");
    const std::size_t h = cfg_.hidden;
    auto layers = [h](std::size_t in, std::size_t out) {
      return h ? std::vector<std::size_t>{in, h, out} : std::vector<std::size_t>{in, out};
    };
    RngStream r1 = rng.split(1), r2 = rng.split(2), r3 = rng.split(3), r4 = rng.split(4), r5 = rng.split(5);
    enc_x_ = MlpModel({layers(geo_.image_dims(), d), 0.0}, r1);
    dec_x_ = MlpModel({layers(d, geo_.image_dims()), 0.0}, r2);
    enc_m_ = MlpModel({layers(geo_.mask_dims(), d), 0.0}, r3);
    dec_m_ = MlpModel({layers(d, geo_.mask_dims()), 0.0}, r4);
    if (cfg_.vq) {
      if (d % cfg_.code_dim) throw std::invalid_argument("code dimension must divide the latent dimension");
      book_x_ = Codebook{gaussian(r5, {cfg_.codebook_size, cfg_.code_dim}), cfg_.commitment};
      book_m_ = Codebook{gaussian(r5, {cfg_.codebook_size, cfg_.code_dim}), cfg_.commitment};
    }
  }

  const PairGeometry& geometry() const noexcept { return geo_; }
  const AutoencoderConfig& config() const noexcept { return cfg_; }
  std::size_t latent_dim() const noexcept { return cfg_.latent_dim; }
  double compression_ratio() const {
    return static_cast<double>(geo_.image_dims() + geo_.mask_dims()) / static_cast<double>(2 * cfg_.latent_dim);
  }

  MlpModel& image_encoder() { return enc_x_; }
  MlpModel& image_decoder() { return dec_x_; }
  MlpModel& mask_encoder() { return enc_m_; }
  MlpModel& mask_decoder() { return dec_m_; }
  const std::optional<Codebook>& image_codebook() const { return book_x_; }
  const std::optional<Codebook>& mask_codebook() const { return book_m_; }
  std::optional<Codebook>& image_codebook() { return book_x_; }
  std::optional<Codebook>& mask_codebook() { return book_m_; }

  Tensor image_rows(std::span<const PairedSample> s) const {
    Tensor out({s.size(), geo_.image_dims()});
    for (std::size_t i = 0; i < s.size(); ++i) std::copy(s[i].image.data().begin(), s[i].image.data().end(), out.row_span(i).begin());
    return out;
  }
  Tensor mask_rows(std::span<const PairedSample> s) const {
    Tensor out({s.size(), geo_.mask_dims()});
    for (std::size_t i = 0; i < s.size(); ++i) std::copy(s[i].mask.data().begin(), s[i].mask.data().end(), out.row_span(i).begin());
    return out;
  }

  /// Deterministic continuous (pre-quantisation) latents.
  PairedLatent encode_pair(const PairedSample& s) const {
    check_geometry(s);
    s.validate();
    const PairedSample one[] = {s};
    Tensor zx = enc_x_.predict(image_rows(one));
    Tensor zm = enc_m_.predict(mask_rows(one));
    return PairedLatent{zx.reshaped({latent_dim()}), zm.reshaped({latent_dim()})};
  }

  /// N × 2·d_lat matrix of joined latents.
  Tensor encode_batch(std::span<const PairedSample> s) const {
    for (const auto& x : s) check_geometry(x);
    const Tensor parts[] = {enc_x_.predict(image_rows(s)), enc_m_.predict(mask_rows(s))};
    return concat_cols(parts);
  }

  /// Quantises (when enabled), decodes, clamps the image to [0,1] and takes the
  /// per-pixel argmax of the mask softmax.
  PairedSample decode_pair(const PairedLatent& lat) const {
    const Tensor parts[] = {lat.z_x.reshaped({1, latent_dim()}), lat.z_m.reshaped({1, latent_dim()})};
    return decode_batch(concat_cols(parts)).front();
  }

  std::vector<PairedSample> decode_batch(const Tensor& joined) const {
    if (joined.ndim() != 2 || joined.cols() != 2 * latent_dim())
      throw std::invalid_argument("decode_batch: expected N×" + std::to_string(2 * latent_dim()) + " latents");
    Tensor zx = slice_cols(joined, 0, latent_dim());
    Tensor zm = slice_cols(joined, latent_dim(), 2 * latent_dim());
    if (book_x_) zx = quantize(zx, *book_x_).zq;
    if (book_m_) zm = quantize(zm, *book_m_).zq;
    Tensor img = dec_x_.predict(zx);
    Tensor logits = dec_m_.predict(zm);
    const std::size_t n = joined.rows(), P = geo_.pixels(), K = geo_.classes;
    std::vector<PairedSample> out;
    out.reserve(n);
    std::vector<double> probs(K);
    for (std::size_t i = 0; i < n; ++i) {
      Tensor image({geo_.channels, geo_.height, geo_.width});
      for (std::size_t j = 0; j < geo_.image_dims(); ++j) image[j] = std::clamp(img(i, j), 0.0, 1.0);
      std::vector<int> labels(P);
      for (std::size_t p = 0; p < P; ++p) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < K; ++c) mx = std::max(mx, logits(i, p * K + c));
        double s = 0.0;
        for (std::size_t c = 0; c < K; ++c) s += (probs[c] = std::exp(logits(i, p * K + c) - mx));
        for (auto& v : probs) v /= s;
        labels[p] = static_cast<int>(argmax(probs));
      }
      out.push_back(PairedSample::from_labels(std::move(image), labels, K));
    }
    return out;
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    enc_x_.save(dir / "enc_x");
    dec_x_.save(dir / "dec_x");
    enc_m_.save(dir / "enc_m");
    dec_m_.save(dir / "dec_m");
    std::vector<Tensor> books;
    if (book_x_) books = {book_x_->entries, book_m_->entries};
    if (!books.empty()) save_tensors(dir / "codebooks.gaud", books);
    nlohmann::json meta{{"d_lat", cfg_.latent_dim},
                        {"V", cfg_.vq ? cfg_.codebook_size : 0},
                        {"K", geo_.classes},
                        {"C", geo_.channels},
                        {"H", geo_.height},
                        {"W", geo_.width},
                        {"compression_ratio", compression_ratio()},
                        {"config", cfg_}};
    std::ofstream(dir / "autoencoder.json") << meta.dump(2) << '\n';
  }

  static PairedAutoencoder load(const std::filesystem::path& dir) {
    std::ifstream js(dir / "autoencoder.json");
    if (!js) throw MissingArtifactError("missing " + (dir / "autoencoder.json").string());
    const auto meta = nlohmann::json::parse(js);
    PairedAutoencoder ae;
    ae.geo_ = PairGeometry{meta.at("C"), meta.at("K"), meta.at("H"), meta.at("W")};
    ae.cfg_ = meta.at("config").get<AutoencoderConfig>();
    ae.enc_x_ = MlpModel::load(dir / "enc_x");
    ae.dec_x_ = MlpModel::load(dir / "dec_x");
    ae.enc_m_ = MlpModel::load(dir / "enc_m");
    ae.dec_m_ = MlpModel::load(dir / "dec_m");
    if (ae.cfg_.vq) {
      auto books = load_tensors(dir / "codebooks.gaud");
      if (books.size() != 2) throw std::runtime_error("codebook container must hold two codebooks");
      ae.book_x_ = Codebook{books[0], ae.cfg_.commitment};
      ae.book_m_ = Codebook{books[1], ae.cfg_.commitment};
    }
    return ae;
  }

 private:
  void check_geometry(const PairedSample& s) const {
    if (s.channels() != geo_.channels || s.classes() != geo_.classes || s.height() != geo_.height ||
        s.width() != geo_.width)
      throw std::invalid_argument("sample geometry does not match the autoencoder");
  }

  PairGeometry geo_;
  AutoencoderConfig cfg_;
  MlpModel enc_x_, dec_x_, enc_m_, dec_m_;
  std::optional<Codebook> book_x_, book_m_;
};

// ---------------------------------------------------------------------------
// Training.

struct BranchLoss {
  double recon = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  std::vector<Tensor> encoder_grads;
  std::vector<Tensor> decoder_grads;
  Tensor codebook_grad;  // empty without quantisation
};

/// One branch's loss on a batch. `mask_branch` selects per-pixel CE over K
/// channels (inputs are channel-major K×P rows) instead of MSE.
inline BranchLoss branch_loss(const MlpModel& enc, const MlpModel& dec, const Codebook* book, const Tensor& x,
                              bool mask_branch, std::size_t classes) {
  Tape tape;
  auto eb = enc.bind(tape);
  auto db = dec.bind(tape);
  Var z = enc.forward(tape, eb, tape.constant(x), Mode::train);
  Var zin = z;
  Var book_var{};
  Var vq_terms{};
  bool have_vq = false;
  if (book) {
    const Quantized q = quantize(tape.value(z), *book);
    const std::size_t chunks = q.indices.size();
    Tensor sel({chunks, book->size()});
    for (std::size_t c = 0; c < chunks; ++c) sel(c, q.indices[c]) = 1.0;
    book_var = tape.leaf(book->entries);
    Var chosen = tape.reshape(tape.matmul(tape.constant(sel), book_var), tape.value(z).shape());
    Var cb = tape.mse(chosen, tape.value(z));
    Var cm = tape.scale(tape.mse(z, tape.value(chosen)), book->commitment);
    vq_terms = tape.add(cb, cm);
    zin = tape.straight_through(z, tape.value(chosen));
    have_vq = true;
  }
  Var out = dec.forward(tape, db, zin, Mode::train);
  Var recon;
  if (mask_branch) {
    // Decoder columns are pixel-major (p·K + c); the channel-major target is reordered to match.
    const std::size_t n = x.rows(), P = x.cols() / classes;
    Tensor target({n * P, classes});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t p = 0; p < P; ++p) target(i * P + p, c) = x(i, c * P + p);
    recon = tape.cross_entropy(tape.reshape(out, {n * P, classes}), target);
  } else {
    recon = tape.mse(out, x);
  }
  Var total = have_vq ? tape.add(recon, vq_terms) : recon;
  tape.backward(total);
  BranchLoss r;
  r.recon = tape.value(recon).item();
  if (have_vq) {
    const Quantized q = quantize(tape.value(z), *book);
    r.codebook = q.codebook_loss;
    r.commitment = q.commitment_loss;
    r.codebook_grad = tape.grad(book_var);
  }
  r.encoder_grads = enc.gradients(tape, eb);
  r.decoder_grads = dec.gradients(tape, db);
  return r;
}

struct AutoencoderReport {
  std::vector<double> image_curve;
  std::vector<double> mask_curve;
  double image_mse = 0.0;
  double mask_pixel_accuracy = 0.0;
  double presence_preserved = 0.0;
  std::size_t codebook_duplicates = 0;
};

inline void to_json(nlohmann::json& j, const AutoencoderReport& r) {
  j = nlohmann::json{{"image_mse", r.image_mse},
                     {"mask_pixel_accuracy", r.mask_pixel_accuracy},
                     {"presence_preserved", r.presence_preserved},
                     {"codebook_duplicates", r.codebook_duplicates},
                     {"final_image_loss", r.image_curve.empty() ? 0.0 : r.image_curve.back()},
                     {"final_mask_loss", r.mask_curve.empty() ? 0.0 : r.mask_curve.back()}};
}

/// Reconstruction metrics over a sample set (encode then decode).
inline AutoencoderReport evaluate_autoencoder(const PairedAutoencoder& ae, std::span<const PairedSample> samples) {
  AutoencoderReport r;
  if (samples.empty()) return r;
  const auto decoded = ae.decode_batch(ae.encode_batch(samples));
  double se = 0.0, correct = 0.0, kept = 0.0, pix = 0.0, vals = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < samples[i].image.size(); ++j) {
      const double d = decoded[i].image[j] - samples[i].image[j];
      se += d * d;
    }
    vals += static_cast<double>(samples[i].image.size());
    const auto a = decoded[i].labels(), b = samples[i].labels();
    for (std::size_t p = 0; p < a.size(); ++p) correct += a[p] == b[p];
    pix += static_cast<double>(a.size());
    kept += decoded[i].presence == samples[i].presence;
  }
  r.image_mse = se / vals;
  r.mask_pixel_accuracy = correct / pix;
  r.presence_preserved = kept / static_cast<double>(samples.size());
  if (ae.mask_codebook()) r.codebook_duplicates = ae.mask_codebook()->duplicate_pairs() + ae.image_codebook()->duplicate_pairs();
  return r;
}

namespace detail {

// Re-seed codebook entries from encoder output chunks; with `only_dead`, just
// the entries unused since the last call.
inline void seed_codebook(Codebook& book, const Tensor& z, const std::vector<std::size_t>& usage, bool only_dead,
                          RngStream& rng) {
  const std::size_t d = book.code_dim(), chunks = z.size() / d;
  for (std::size_t e = 0; e < book.size(); ++e) {
    if (only_dead && usage[e] > 0) continue;
    const std::size_t c = rng.uniform_index(chunks);
    auto row = book.entries.row_span(e);
    for (std::size_t j = 0; j < d; ++j) row[j] = z[c * d + j] + 1e-3 * rng.normal();
  }
}

}  // namespace detail

/// Trains both branches on the same batches. With quantisation enabled the
/// first `vq_warmup` fraction of steps runs as a plain autoencoder, the
/// codebooks are then seeded from encoder outputs, and entries left unused
/// for 200 steps are re-seeded.
inline AutoencoderReport train_autoencoders(PairedAutoencoder& ae, std::span<const PairedSample> data,
                                            RngStream& rng) {
  if (data.empty()) throw std::invalid_argument("train_autoencoders: empty dataset");
  const auto& cfg = ae.config();
  auto& ex = ae.image_encoder();
  auto& dx = ae.image_decoder();
  auto& em = ae.mask_encoder();
  auto& dm = ae.mask_decoder();
  const auto adam = AdamConfig::adamw(cfg.lr, cfg.weight_decay);
  AdamState o_ex(adam, ex.parameters()), o_dx(adam, dx.parameters()), o_em(adam, em.parameters()),
      o_dm(adam, dm.parameters());
  std::vector<Tensor> bx, bm;
  AdamState o_bx, o_bm;
  if (ae.image_codebook()) {
    bx = {ae.image_codebook()->entries};
    bm = {ae.mask_codebook()->entries};
    o_bx = AdamState(adam, bx);
    o_bm = AdamState(adam, bm);
  }
  const std::size_t warm = static_cast<std::size_t>(cfg.vq_warmup * static_cast<double>(cfg.steps));
  const std::size_t V = cfg.vq ? cfg.codebook_size : 0;
  std::vector<std::size_t> use_x(V, 0), use_m(V, 0);
  AutoencoderReport rep;
  std::vector<std::size_t> idx(cfg.batch);
  std::vector<PairedSample> batch(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < cfg.batch; ++i) batch[i] = data[rng.uniform_index(data.size())];
    const Tensor x = ae.image_rows(batch), m = ae.mask_rows(batch);
    const bool vq_on = cfg.vq && step >= warm;
    if (cfg.vq && (step == warm || (vq_on && (step - warm) % 200 == 0))) {
      // Encoder outputs on a larger probe batch seed the codebooks.
      std::vector<PairedSample> probe(std::min<std::size_t>(512, data.size()));
      for (auto& p : probe) p = data[rng.uniform_index(data.size())];
      const Tensor zx = ex.predict(ae.image_rows(probe)), zm = em.predict(ae.mask_rows(probe));
      const bool only_dead = step != warm;
      detail::seed_codebook(*ae.image_codebook(), zx, use_x, only_dead, rng);
      detail::seed_codebook(*ae.mask_codebook(), zm, use_m, only_dead, rng);
      bx = {ae.image_codebook()->entries};
      bm = {ae.mask_codebook()->entries};
      std::fill(use_x.begin(), use_x.end(), 0);
      std::fill(use_m.begin(), use_m.end(), 0);
    }
    const Codebook* cbx = vq_on ? &*ae.image_codebook() : nullptr;
    const Codebook* cbm = vq_on ? &*ae.mask_codebook() : nullptr;
    BranchLoss lx = branch_loss(ex, dx, cbx, x, false, 1);
    BranchLoss lm = branch_loss(em, dm, cbm, m, true, ae.geometry().classes);
    if (!std::isfinite(lx.recon) || !std::isfinite(lm.recon))
      throw NumericError("autoencoder training diverged at step " + std::to_string(step));
    adam_step(o_ex, ex.parameters(), lx.encoder_grads);
    adam_step(o_dx, dx.parameters(), lx.decoder_grads);
    adam_step(o_em, em.parameters(), lm.encoder_grads);
    adam_step(o_dm, dm.parameters(), lm.decoder_grads);
    if (vq_on) {
      for (auto i : quantize(ex.predict(x), *cbx).indices) ++use_x[i];
      for (auto i : quantize(em.predict(m), *cbm).indices) ++use_m[i];
      std::vector<Tensor> gx{lx.codebook_grad}, gm{lm.codebook_grad};
      adam_step(o_bx, bx, gx);
      adam_step(o_bm, bm, gm);
      ae.image_codebook()->entries = bx[0];
      ae.mask_codebook()->entries = bm[0];
    }
    rep.image_curve.push_back(lx.recon);
    rep.mask_curve.push_back(lm.recon);
  }
  const auto eval = evaluate_autoencoder(ae, data);
  rep.image_mse = eval.image_mse;
  rep.mask_pixel_accuracy = eval.mask_pixel_accuracy;
  rep.presence_preserved = eval.presence_preserved;
  rep.codebook_duplicates = eval.codebook_duplicates;
  if (rep.codebook_duplicates) log_warning("codebook collapse: " + std::to_string(rep.codebook_duplicates) + " identical entry pairs");
  return rep;
}

}  // namespace gauda
