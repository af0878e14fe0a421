#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <complex>
#include <fstream>
#include <numbers>

#include "meanse/frontend.hpp"
#include "support.hpp"

using namespace meanse;
using namespace meanse::frontend;

namespace {

Waveform random_wave(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Waveform w(n);
  for (auto& v : w) v = rng.normal();
  return w;
}

double rel_roundtrip(const StftConfig& cfg, std::size_t n, std::uint64_t seed) {
  const auto w = random_wave(n, seed);
  const auto back = istft(stft(w, cfg), cfg, n);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) num += (back[i] - w[i]) * (back[i] - w[i]), den += w[i] * w[i];
  return std::sqrt(num / den);
}

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.train_pool = 20;
  c.test_count = 6;
  c.ood_count = 6;
  c.duration_s = 0.25;
  return c;
}

}  // namespace

TEST_CASE("STFT round trip at desk and full-band geometries") {
  CHECK(rel_roundtrip({126, 32, Window::hann, 8000}, 4000, 1) <= 1e-10);
  CHECK(rel_roundtrip({1022, 320, Window::hann, 16000}, 16000, 2) <= 1e-10);
  CHECK(rel_roundtrip({64, 64, Window::rectangular, 8000}, 1024, 3) <= 1e-10);
  CHECK(rel_roundtrip({126, 32, Window::hann, 8000}, 1001, 4) <= 1e-10);
}

TEST_CASE("STFT geometry and spectrum of a tone") {
  const StftConfig cfg;
  const std::size_t n = 2000;
  Waveform w(n);
  // Bin 10 of a 126-point transform.
  for (std::size_t i = 0; i < n; ++i) w[i] = std::cos(2 * std::numbers::pi * 10.0 * i / 126.0);
  const auto s = stft(w, cfg);
  CHECK(s.bins == 64);
  CHECK(s.frames == n / 32 + 1);
  const auto f = s.frames / 2;
  std::size_t peak = 0;
  for (std::size_t k = 0; k < s.bins; ++k)
    if (std::abs(s.at(f, k)) > std::abs(s.at(f, peak))) peak = k;
  CHECK(peak == 10);
}

TEST_CASE("STFT configuration checks") {
  CHECK_THROWS_AS(StftConfig({126, 200, Window::hann, 8000}).validate(), StftError);
  CHECK_THROWS_AS(StftConfig({126, 126, Window::hann, 8000}).validate(), StftError);  // periodic Hann vanishes at 0
  CHECK_NOTHROW(StftConfig({126, 63, Window::hann, 8000}).validate());
  Stft st(StftConfig{});
  CHECK_THROWS(st.forward(Waveform(50, 0.0)));
}

TEST_CASE("SNR mixing is exact") {
  const auto clean = random_wave(3000, 5), noise = random_wave(3000, 6);
  for (double snr : {-5.0, 0.0, 2.5, 17.5, 30.0}) {
    const double g = snr_gain(clean, noise, snr);
    Waveform scaled(noise.size());
    for (std::size_t i = 0; i < noise.size(); ++i) scaled[i] = g * noise[i];
    CHECK(std::abs(realized_snr_db(clean, scaled) - snr) <= 1e-6);
    const auto mix = mix_at_snr(clean, noise, snr);
    for (std::size_t i = 0; i < 5; ++i) CHECK(mix[i] == clean[i] + scaled[i]);
  }
  CHECK_THROWS(snr_gain(clean, Waveform(3000, 0.0), 0.0));
}

TEST_CASE("synthetic signals") {
  Rng rng(7);
  const SynthConfig sc;
  const auto c = synth_clean(rng, 0.5, sc);
  CHECK(c.wave.size() == 4000);
  CHECK(testing::max_abs(c.wave) == doctest::Approx(sc.peak));
  CHECK((c.f0 >= sc.f0_min && c.f0 <= sc.f0_max));
  CHECK((c.partials >= sc.partials_min && c.partials <= sc.partials_max));
  for (auto fam : {NoiseFamily::pink, NoiseFamily::burst}) {
    const auto n = make_noise(fam, rng, 4000, 8000);
    CHECK(n.size() == 4000);
    CHECK(power(n) > 0.0);
  }
  CHECK(noise_family_from_string(to_string(NoiseFamily::burst)) == NoiseFamily::burst);
  CHECK_THROWS(noise_family_from_string("white"));
}

TEST_CASE("pink noise falls off with frequency") {
  Rng rng(8);
  const auto n = pink_noise(rng, 1 << 14);
  const auto s = stft(n, StftConfig{});
  double lo = 0, hi = 0;
  for (std::size_t f = 0; f < s.frames; ++f) {
    for (std::size_t k = 2; k < 8; ++k) lo += std::norm(s.at(f, k));
    for (std::size_t k = 40; k < 46; ++k) hi += std::norm(s.at(f, k));
  }
  CHECK(lo > 3.0 * hi);
}

TEST_CASE("corpus construction is deterministic and split as configured") {
  const auto cfg = small_corpus();
  const auto a = build_corpus(cfg), b = build_corpus(cfg);
  REQUIRE(a.pairs.size() == 32);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) CHECK(encode_pair(a.pairs[i]) == encode_pair(b.pairs[i]));
  CHECK(a.split(Split::train).size() + a.split(Split::val).size() == 20);
  CHECK(a.split(Split::val).size() == 2);
  for (const auto* p : a.split(Split::ood)) CHECK(p->noise == NoiseFamily::burst);
  for (const auto* p : a.split(Split::test)) {
    CHECK(p->noise == NoiseFamily::pink);
    Waveform n(p->noisy.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = p->noisy[i] - p->clean[i];
    CHECK(std::abs(realized_snr_db(p->clean, n) - p->snr_db) <= 1e-6);
  }
  auto other = cfg;
  other.seed = 2;
  CHECK(encode_pair(build_corpus(other).pairs[0]) != encode_pair(a.pairs[0]));
}

TEST_CASE("corpus files round trip and detect tampering") {
  const auto corpus = build_corpus(small_corpus());
  testing::TempDir dir("corpus");
  write_corpus(corpus, dir.path());
  const auto back = read_corpus(dir.path());
  REQUIRE(back.pairs.size() == corpus.pairs.size());
  for (std::size_t i = 0; i < back.pairs.size(); ++i) CHECK(encode_pair(back.pairs[i]) == encode_pair(corpus.pairs[i]));
  const auto manifest = read_manifest(dir.path() / "manifest.tsv");
  CHECK(manifest.size() == corpus.pairs.size());

  const auto victim = dir.path() / "pairs" / (corpus.pairs[3].id + ".bin");
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(64);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(read_corpus(dir.path()), CorpusError);
}

TEST_CASE("feature rows round trip with padding and scaling") {
  Spectrogram s{5, 3, {}};
  for (std::size_t i = 0; i < 15; ++i) s.data.emplace_back(0.1 * i, -0.05 * i);
  const FeatureConfig f{0.3, 2};
  const auto rows = to_rows(s, f);
  CHECK(rows.shape() == ad::Shape{3, 12});
  CHECK(rows.at(0, 2) == doctest::Approx(0.3 * 0.1));
  CHECK(rows.at(0, 3) == doctest::Approx(0.3 * -0.05));
  CHECK(rows.at(2, 6) == 0.0);  // padding
  const auto back = from_rows(rows, 5, 3, f);
  for (std::size_t i = 0; i < 15; ++i) CHECK(std::abs(back.data[i] - s.data[i]) <= 1e-15);
}

TEST_CASE("synthesis is seeded and its spectral peak sits at f0") {
  const SynthConfig sc;
  Rng a(12), b(12);
  const auto ca = synth_clean(a, 0.5, sc), cb = synth_clean(b, 0.5, sc);
  CHECK(ca.wave == cb.wave);
  CHECK(power(ca.wave) > 0.0);
  for (std::uint64_t seed = 20; seed < 30; ++seed) {
    Rng rng(seed);
    const auto c = synth_clean(rng, 1.0, sc);
    // Whole-signal periodogram, 1 Hz bins.
    const std::size_t n = c.wave.size();
    double best = 0.0;
    std::size_t peak = 0;
    for (std::size_t k = 50; k < 400; ++k) {
      std::complex<double> acc = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        acc += c.wave[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / static_cast<double>(n));
      if (std::abs(acc) > best) best = std::abs(acc), peak = k;
    }
    CHECK(std::abs(static_cast<double>(peak) - c.f0) <= 1.0);
  }
}

TEST_CASE("mixing gains") {
  Waveform a(1000), b(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    a[i] = std::sin(0.1 * i);
    b[i] = std::cos(0.1 * i);
  }
  // Equalize powers exactly.
  const double s = std::sqrt(power(a) / power(b));
  for (auto& v : b) v *= s;
  CHECK(snr_gain(a, b, 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(snr_gain(a, b, 10.0) == doctest::Approx(std::pow(10.0, -0.5)).epsilon(1e-12));
}

TEST_CASE("a bin-centred sinusoid stays in its bin") {
  const StftConfig cfg;
  Waveform w(4000);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(2 * std::numbers::pi * 17.0 * i / 126.0 + 0.3);
  const auto s = stft(w, cfg);
  double near = 0, total = 0;
  for (std::size_t f = 2; f + 2 < s.frames; ++f)
    for (std::size_t k = 0; k < s.bins; ++k) {
      const double e = std::norm(s.at(f, k));
      total += e;
      if (k >= 16 && k <= 18) near += e;
    }
  CHECK(near / total > 0.99);
  const auto z = stft(Waveform(500, 0.0), cfg);
  for (const auto& c : z.data) CHECK(c == std::complex<double>(0.0, 0.0));
}

TEST_CASE("corpus SNRs and noise families follow the configuration") {
  const CorpusConfig cfg;
  CHECK(cfg.train_noise != cfg.ood_noise);
  const auto corpus = build_corpus(cfg);
  for (const auto& p : corpus.pairs) {
    const auto& set = (p.split == Split::train || p.split == Split::val) ? cfg.train_snrs : cfg.test_snrs;
    CHECK(std::find(set.begin(), set.end(), p.snr_db) != set.end());
    Waveform n(p.noisy.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = p.noisy[i] - p.clean[i];
    CHECK(std::abs(realized_snr_db(p.clean, n) - p.snr_db) <= 1e-6);
    CHECK((p.noise == cfg.ood_noise) == (p.split == Split::ood));
  }
  for (auto s : {Split::train, Split::val, Split::test, Split::ood}) CHECK_FALSE(corpus.split(s).empty());
}
