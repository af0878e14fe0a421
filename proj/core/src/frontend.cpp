#include "meanse/frontend.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "meanse/binary_io.hpp"
#include "meanse/checkpoint.hpp"

namespace meanse::frontend {

namespace {

// Thin owner of one real-to-complex / complex-to-real plan pair.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    real_ = fftw_alloc_real(n);
    spec_ = fftw_alloc_complex(n / 2 + 1);
    const int ni = static_cast<int>(n);
    fwd_ = fftw_plan_dft_r2c_1d(ni, real_, spec_, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(ni, spec_, real_, FFTW_ESTIMATE);
    if (!real_ || !spec_ || !fwd_ || !inv_) throw std::runtime_error("FFTW plan creation failed");
  }
  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
    fftw_free(real_);
    fftw_free(spec_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  std::size_t size() const { return n_; }
  double* real() { return real_; }
  std::complex<double>* spec() { return reinterpret_cast<std::complex<double>*>(spec_); }
  void forward() { fftw_execute(fwd_); }
  /// Unnormalized: the result is n times the true inverse.
  void inverse() { fftw_execute(inv_); }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan inv_ = nullptr;
};

std::size_t reflect(std::ptrdiff_t j, std::size_t n) {
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  if (j < 0) j = -j;
  if (j > last) j = 2 * last - j;
  return static_cast<std::size_t>(j);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

constexpr char kPairMagic[8] = {'M', 'S', 'E', 'P', 'A', 'I', 'R', '\0'};
constexpr std::uint32_t kPairVersion = 1;

}  // namespace

std::string to_string(Window w) { return w == Window::hann ? "hann" : "rectangular"; }

Window window_from_string(const std::string& name) {
  if (name == "hann") return Window::hann;
  if (name == "rectangular") return Window::rectangular;
  throw std::invalid_argument("unknown window: " + name);
}

std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::hann)
    for (std::size_t i = 0; i < n; ++i)
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return out;
}

void StftConfig::validate() const {
  if (n_fft < 2) throw StftError("n_fft must be at least 2");
  if (hop == 0 || hop > n_fft) throw StftError("hop must lie in [1, n_fft]");
  if (sample_rate_hz == 0) throw StftError("sample rate must be positive");
  // Weighted overlap-add divides by the overlapped squared window, so it must
  // stay away from zero at every phase of the hop.
  const auto w = make_window(window, n_fft);
  double peak = 0.0, low = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < hop; ++i) {
    double s = 0.0;
    for (std::size_t j = i; j < n_fft; j += hop) s += w[j] * w[j];
    peak = std::max(peak, s);
    low = std::min(low, s);
  }
  if (!(low > 1e-10 * peak))
    throw StftError("window " + to_string(window) + " with n_fft " + std::to_string(n_fft) + " and hop " +
                    std::to_string(hop) + " leaves samples unrecoverable by overlap-add");
}

struct Stft::Plans {
  explicit Plans(std::size_t n) : fft(n) {}
  RealFft fft;
};

Stft::Stft(StftConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  window_ = make_window(cfg_.window, cfg_.n_fft);
  plans_ = std::make_unique<Plans>(cfg_.n_fft);
}

Stft::~Stft() = default;

Spectrogram Stft::forward(std::span<const double> wave) {
  const std::size_t n = wave.size(), nf = cfg_.n_fft, pad = nf / 2;
  if (n < nf) throw StftError("signal shorter than n_fft");
  const std::size_t frames = (n + 2 * pad - nf) / cfg_.hop + 1;
  Spectrogram s{frames, cfg_.n_bins(), std::vector<std::complex<double>>(frames * cfg_.n_bins())};
  auto& fft = plans_->fft;
  for (std::size_t f = 0; f < frames; ++f) {
    const auto start = static_cast<std::ptrdiff_t>(f * cfg_.hop) - static_cast<std::ptrdiff_t>(pad);
    for (std::size_t i = 0; i < nf; ++i)
      fft.real()[i] = window_[i] * wave[reflect(start + static_cast<std::ptrdiff_t>(i), n)];
    fft.forward();
    std::copy_n(fft.spec(), s.bins, s.data.begin() + static_cast<std::ptrdiff_t>(f * s.bins));
  }
  return s;
}

Waveform Stft::inverse(const Spectrogram& spec, std::size_t length) {
  const std::size_t nf = cfg_.n_fft, pad = nf / 2;
  if (spec.bins != cfg_.n_bins()) throw StftError("spectrogram bin count does not match n_fft");
  if (spec.frames == 0) throw StftError("empty spectrogram");
  const std::size_t total = (spec.frames - 1) * cfg_.hop + nf;
  if (length + pad > total) throw StftError("requested length exceeds spectrogram coverage");
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  auto& fft = plans_->fft;
  const double inv_n = 1.0 / static_cast<double>(nf);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    std::copy_n(spec.data.begin() + static_cast<std::ptrdiff_t>(f * spec.bins), spec.bins, fft.spec());
    // c2r assumes Hermitian input; the DC and Nyquist bins must be real.
    fft.spec()[0].imag(0.0);
    if (nf % 2 == 0) fft.spec()[spec.bins - 1].imag(0.0);
    fft.inverse();
    const std::size_t off = f * cfg_.hop;
    for (std::size_t i = 0; i < nf; ++i) {
      acc[off + i] += window_[i] * fft.real()[i] * inv_n;
      norm[off + i] += window_[i] * window_[i];
    }
  }
  Waveform out(length);
  for (std::size_t j = 0; j < length; ++j) {
    const double d = norm[j + pad];
    if (!(d > 1e-11)) throw StftError("overlap-add normalization vanishes inside the signal");
    out[j] = acc[j + pad] / d;
  }
  return out;
}

Spectrogram stft(std::span<const double> wave, const StftConfig& cfg) {
  Stft s(cfg);
  return s.forward(wave);
}

Waveform istft(const Spectrogram& spec, const StftConfig& cfg, std::size_t length) {
  Stft s(cfg);
  return s.inverse(spec, length);
}

// ---------------------------------------------------------------------------

CleanSignal synth_clean(Rng& rng, double duration_s, const SynthConfig& cfg) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(duration_s * cfg.sample_rate_hz));
  if (n == 0) throw std::invalid_argument("duration shorter than one sample");
  const double sr = cfg.sample_rate_hz;
  CleanSignal out;
  out.f0 = rng.uniform(cfg.f0_min, cfg.f0_max);
  out.partials =
      cfg.partials_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.partials_max - cfg.partials_min + 1)));
  out.wave.assign(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int k = 1; k <= out.partials; ++k) {
    const double amp = std::pow(cfg.partial_decay, k - 1);
    const double phase = rng.uniform(0.0, two_pi);
    const double f = out.f0 * k;
    for (std::size_t i = 0; i < n; ++i) out.wave[i] += amp * std::sin(two_pi * f * (i / sr) + phase);
  }
  const double rate = rng.uniform(1.0, 4.0);
  const double phase = rng.uniform(0.0, two_pi);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.wave[i] *= 0.6 + 0.4 * std::sin(two_pi * rate * (i / sr) + phase);
    peak = std::max(peak, std::abs(out.wave[i]));
  }
  for (auto& v : out.wave) v *= cfg.peak / peak;
  return out;
}

std::string to_string(NoiseFamily f) { return f == NoiseFamily::pink ? "pink" : "burst"; }

NoiseFamily noise_family_from_string(const std::string& name) {
  if (name == "pink") return NoiseFamily::pink;
  if (name == "burst") return NoiseFamily::burst;
  throw std::invalid_argument("unknown noise family: " + name);
}

Waveform pink_noise(Rng& rng, std::size_t n) {
  RealFft fft(n);
  for (std::size_t i = 0; i < n; ++i) fft.real()[i] = rng.normal();
  fft.forward();
  for (std::size_t k = 1; k < n / 2 + 1; ++k) fft.spec()[k] /= std::sqrt(static_cast<double>(k));
  fft.inverse();
  Waveform out(fft.real(), fft.real() + n);
  for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

Waveform burst_noise(Rng& rng, std::size_t n, std::uint32_t sample_rate_hz) {
  RealFft fft(n);
  for (std::size_t i = 0; i < n; ++i) fft.real()[i] = rng.normal();
  const double centre = rng.uniform(800.0, 2500.0);
  const double rate = rng.uniform(3.0, 8.0);
  fft.forward();
  const double df = static_cast<double>(sample_rate_hz) / static_cast<double>(n);
  for (std::size_t k = 0; k < n / 2 + 1; ++k) {
    const double z = (k * df - centre) / 300.0;
    fft.spec()[k] *= std::exp(-0.5 * z * z);
  }
  fft.inverse();
  Waveform out(n);
  const double sr = sample_rate_hz;
  for (std::size_t i = 0; i < n; ++i) {
    const double gate = std::pow(std::max(0.0, std::sin(2.0 * std::numbers::pi * rate * (i / sr))), 4);
    out[i] = fft.real()[i] / static_cast<double>(n) * gate;
  }
  for (auto& v : out) v += 1e-3 * rng.normal();
  return out;
}

Waveform make_noise(NoiseFamily family, Rng& rng, std::size_t n, std::uint32_t sample_rate_hz) {
  return family == NoiseFamily::pink ? pink_noise(rng, n) : burst_noise(rng, n, sample_rate_hz);
}

double power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

double snr_gain(std::span<const double> clean, std::span<const double> noise, double snr_db) {
  if (clean.size() != noise.size()) throw std::invalid_argument("clean and noise lengths differ");
  const double pc = power(clean), pn = power(noise);
  if (!(pc > 0.0)) throw std::domain_error("clean signal is silent");
  if (!(pn > 0.0)) throw std::domain_error("noise is silent; mixing gain undefined");
  return std::sqrt(pc / (pn * std::pow(10.0, snr_db / 10.0)));
}

Waveform mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr_db) {
  const double g = snr_gain(clean, noise, snr_db);
  Waveform out(clean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean[i] + g * noise[i];
  return out;
}

double realized_snr_db(std::span<const double> clean, std::span<const double> scaled_noise) {
  return 10.0 * std::log10(power(clean) / power(scaled_noise));
}

// ---------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::ood: return "ood";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  if (name == "ood") return Split::ood;
  throw std::invalid_argument("unknown split: " + name);
}

void CorpusConfig::validate() const {
  if (!(duration_s > 0.0)) throw std::invalid_argument("corpus duration must be positive");
  if (train_pool < 10 || test_count == 0 || ood_count == 0)
    throw std::invalid_argument("corpus counts must be positive (train_pool at least 10)");
  if (train_snrs.empty() || test_snrs.empty()) throw std::invalid_argument("SNR sets must be nonempty");
  if (train_noise == ood_noise) throw std::invalid_argument("out-of-domain noise family must differ from training");
  if (synth.partials_min < 1 || synth.partials_max < synth.partials_min)
    throw std::invalid_argument("invalid partial range");
  if (!(synth.f0_min > 0.0 && synth.f0_max >= synth.f0_min)) throw std::invalid_argument("invalid f0 range");
}

std::vector<const Pair*> Corpus::split(Split s) const {
  std::vector<const Pair*> out;
  for (const auto& p : pairs)
    if (p.split == s) out.push_back(&p);
  return out;
}

namespace {

Pair make_pair(const CorpusConfig& cfg, std::uint64_t stream, double snr, NoiseFamily family) {
  Rng rng = Rng::stream(cfg.seed, stream);
  Pair p;
  p.clean = synth_clean(rng, cfg.duration_s, cfg.synth).wave;
  const Waveform noise = make_noise(family, rng, p.clean.size(), cfg.synth.sample_rate_hz);
  p.noisy = mix_at_snr(p.clean, noise, snr);
  p.snr_db = snr;
  p.noise = family;
  return p;
}

std::string make_id(Split s, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", to_string(s).c_str(), i);
  return buf;
}

}  // namespace

Corpus build_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus c;
  // Seeded choice of the validation tenth of the training pool.
  std::vector<std::size_t> order(cfg.train_pool);
  std::iota(order.begin(), order.end(), 0);
  Rng perm = Rng::stream(cfg.seed, 0);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[perm.below(i + 1)]);
  std::vector<bool> is_val(cfg.train_pool, false);
  for (std::size_t i = 0; i < cfg.train_pool / 10; ++i) is_val[order[i]] = true;

  std::size_t n_train = 0, n_val = 0;
  for (std::size_t i = 0; i < cfg.train_pool; ++i) {
    Pair p = make_pair(cfg, 1'000'000 + i, cfg.train_snrs[i % cfg.train_snrs.size()], cfg.train_noise);
    p.split = is_val[i] ? Split::val : Split::train;
    p.id = make_id(p.split, is_val[i] ? n_val++ : n_train++);
    c.pairs.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < cfg.test_count; ++i) {
    Pair p = make_pair(cfg, 2'000'000 + i, cfg.test_snrs[i % cfg.test_snrs.size()], cfg.train_noise);
    p.split = Split::test;
    p.id = make_id(p.split, i);
    c.pairs.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < cfg.ood_count; ++i) {
    Pair p = make_pair(cfg, 3'000'000 + i, cfg.test_snrs[i % cfg.test_snrs.size()], cfg.ood_noise);
    p.split = Split::ood;
    p.id = make_id(p.split, i);
    c.pairs.push_back(std::move(p));
  }
  return c;
}

SpectroPair to_spectro(const Pair& pair, Stft& stft) {
  return SpectroPair{stft.forward(pair.clean), stft.forward(pair.noisy), pair.snr_db, pair.id};
}

std::vector<std::uint8_t> encode_pair(const Pair& p) {
  if (p.clean.size() != p.noisy.size()) throw CorpusError("pair " + p.id + ": clean and noisy lengths differ");
  io::ByteWriter w;
  w.put_raw(kPairMagic, sizeof kPairMagic);
  w.put(kPairVersion);
  w.put(static_cast<std::uint8_t>(p.split));
  w.put(static_cast<std::uint8_t>(p.noise));
  w.put_f64(p.snr_db);
  w.put_string(p.id);
  w.put<std::uint64_t>(p.clean.size());
  w.put_f64s(p.clean);
  w.put_f64s(p.noisy);
  return std::move(w.bytes());
}

Pair decode_pair(const std::vector<std::uint8_t>& bytes) {
  try {
    io::ByteReader r(bytes);
    char magic[8];
    r.get_raw(magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kPairMagic)) throw CorpusError("not a pair file");
    if (r.get<std::uint32_t>() != kPairVersion) throw CorpusError("unsupported pair file version");
    Pair p;
    const auto split = r.get<std::uint8_t>();
    const auto noise = r.get<std::uint8_t>();
    if (split > 3 || noise > 1) throw CorpusError("invalid split or noise tag");
    p.split = static_cast<Split>(split);
    p.noise = static_cast<NoiseFamily>(noise);
    p.snr_db = r.get_f64();
    p.id = r.get_string();
    const auto n = r.get<std::uint64_t>();
    if (n * 16 != r.remaining()) throw CorpusError("pair payload size mismatch");
    p.clean = r.get_f64s(n);
    p.noisy = r.get_f64s(n);
    return p;
  } catch (const std::out_of_range&) {
    throw CorpusError("pair file truncated");
  }
}

std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::ostringstream manifest;
  manifest << "id\tsplit\tsnr_db\tnoise_family\tchecksum\n";
  for (const auto& p : corpus.pairs) {
    const auto bytes = encode_pair(p);
    io::write_file(dir / "pairs" / (p.id + ".bin"), bytes);
    char snr[32];
    std::snprintf(snr, sizeof snr, "%.17g", p.snr_db);
    manifest << p.id << '\t' << to_string(p.split) << '\t' << snr << '\t' << to_string(p.noise) << '\t'
             << hex64(ckpt::fnv1a(bytes.data(), bytes.size())) << '\n';
  }
  const auto path = dir / "manifest.tsv";
  io::write_text(path, manifest.str());
  return path;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw CorpusError("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || line != "id\tsplit\tsnr_db\tnoise_family\tchecksum")
    throw CorpusError("manifest header missing or malformed");
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string split, snr, noise;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, split, '\t') || !std::getline(ls, snr, '\t') ||
        !std::getline(ls, noise, '\t') || !std::getline(ls, e.checksum, '\t'))
      throw CorpusError("malformed manifest line: " + line);
    try {
      e.split = split_from_string(split);
      e.noise = noise_family_from_string(noise);
      e.snr_db = std::stod(snr);
    } catch (const std::exception& ex) {
      throw CorpusError("malformed manifest line: " + line + " (" + ex.what() + ")");
    }
    out.push_back(std::move(e));
  }
  return out;
}

Corpus read_corpus(const std::filesystem::path& dir) {
  const auto entries = read_manifest(dir / "manifest.tsv");
  Corpus c;
  for (const auto& e : entries) {
    const auto bytes = io::read_file(dir / "pairs" / (e.id + ".bin"));
    if (hex64(ckpt::fnv1a(bytes.data(), bytes.size())) != e.checksum)
      throw CorpusError("checksum mismatch for pair " + e.id);
    Pair p = decode_pair(bytes);
    if (p.id != e.id || p.split != e.split || p.noise != e.noise || p.snr_db != e.snr_db)
      throw CorpusError("pair " + e.id + " disagrees with its manifest entry");
    c.pairs.push_back(std::move(p));
  }
  return c;
}

// ---------------------------------------------------------------------------

ad::NdArray to_rows(const Spectrogram& spec, const FeatureConfig& cfg) {
  const std::size_t P = cfg.patch_frames;
  if (P == 0) throw std::invalid_argument("patch_frames must be positive");
  const std::size_t rows = (spec.frames + P - 1) / P;
  const std::size_t width = P * spec.bins * 2;
  ad::NdArray out(ad::Shape{rows, width});
  for (std::size_t f = 0; f < spec.frames; ++f) {
    double* dst = out.data() + (f / P) * width + (f % P) * spec.bins * 2;
    for (std::size_t k = 0; k < spec.bins; ++k) {
      dst[2 * k] = spec.at(f, k).real() * cfg.spec_scale;
      dst[2 * k + 1] = spec.at(f, k).imag() * cfg.spec_scale;
    }
  }
  return out;
}

Spectrogram from_rows(const ad::NdArray& rows, std::size_t frames, std::size_t bins, const FeatureConfig& cfg) {
  const std::size_t P = cfg.patch_frames;
  const std::size_t width = P * bins * 2;
  if (rows.rank() != 2 || rows.cols() != width || rows.rows() * P < frames)
    throw std::invalid_argument("rows do not match the spectrogram geometry");
  Spectrogram s{frames, bins, std::vector<std::complex<double>>(frames * bins)};
  for (std::size_t f = 0; f < frames; ++f) {
    const double* src = rows.data() + (f / P) * width + (f % P) * bins * 2;
    for (std::size_t k = 0; k < bins; ++k) s.at(f, k) = {src[2 * k] / cfg.spec_scale, src[2 * k + 1] / cfg.spec_scale};
  }
  return s;
}

}  // namespace meanse::frontend
