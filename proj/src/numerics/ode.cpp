// Dormand-Prince 8(5,3) with seventh-order dense output.
//
// Coefficients are those of Hairer & Wanner's DOP853 (Solving Ordinary
// Differential Equations I, 2nd ed., Springer 1993).

#include "nlm/numerics/ode.hpp"

#include "nlm/error.hpp"

#include <algorithm>
#include <cmath>

namespace nlm::num {

namespace {

namespace c {
constexpr double c2 = 0.526001519587677318785587544488E-01;
constexpr double c3 = 0.789002279381515978178381316732E-01;
constexpr double c4 = 0.118350341907227396726757197510E+00;
constexpr double c5 = 0.281649658092772603273242802490E+00;
constexpr double c6 = 0.333333333333333333333333333333E+00;
constexpr double c7 = 0.25E+00;
constexpr double c8 = 0.307692307692307692307692307692E+00;
constexpr double c9 = 0.651282051282051282051282051282E+00;
constexpr double c10 = 0.6E+00;
constexpr double c11 = 0.857142857142857142857142857142E+00;
constexpr double c14 = 0.1E+00;
constexpr double c15 = 0.2E+00;
constexpr double c16 = 0.777777777777777777777777777778E+00;

constexpr double b1 = 5.42937341165687622380535766363E-2;
constexpr double b6 = 4.45031289275240888144113950566E0;
constexpr double b7 = 1.89151789931450038304281599044E0;
constexpr double b8 = -5.8012039600105847814672114227E0;
constexpr double b9 = 3.1116436695781989440891606237E-1;
constexpr double b10 = -1.52160949662516078556178806805E-1;
constexpr double b11 = 2.01365400804030348374776537501E-1;
constexpr double b12 = 4.47106157277725905176885569043E-2;

constexpr double bhh1 = 0.244094488188976377952755905512E+00;
constexpr double bhh2 = 0.733846688281611857341361741547E+00;
constexpr double bhh3 = 0.220588235294117647058823529412E-01;

constexpr double er1 = 0.1312004499419488073250102996E-01;
constexpr double er6 = -0.1225156446376204440720569753E+01;
constexpr double er7 = -0.4957589496572501915214079952E+00;
constexpr double er8 = 0.1664377182454986536961530415E+01;
constexpr double er9 = -0.3503288487499736816886487290E+00;
constexpr double er10 = 0.3341791187130174790297318841E+00;
constexpr double er11 = 0.8192320648511571246570742613E-01;
constexpr double er12 = -0.2235530786388629525884427845E-01;

constexpr double a21 = 5.26001519587677318785587544488E-2;
constexpr double a31 = 1.97250569845378994544595329183E-2;
constexpr double a32 = 5.91751709536136983633785987549E-2;
constexpr double a41 = 2.95875854768068491816892993775E-2;
constexpr double a43 = 8.87627564304205475450678981324E-2;
constexpr double a51 = 2.41365134159266685502369798665E-1;
constexpr double a53 = -8.84549479328286085344864962717E-1;
constexpr double a54 = 9.24834003261792003115737966543E-1;
constexpr double a61 = 3.7037037037037037037037037037E-2;
constexpr double a64 = 1.70828608729473871279604482173E-1;
constexpr double a65 = 1.25467687566822425016691814123E-1;
constexpr double a71 = 3.7109375E-2;
constexpr double a74 = 1.70252211019544039314978060272E-1;
constexpr double a75 = 6.02165389804559606850219397283E-2;
constexpr double a76 = -1.7578125E-2;
constexpr double a81 = 3.70920001185047927108779319836E-2;
constexpr double a84 = 1.70383925712239993810214054705E-1;
constexpr double a85 = 1.07262030446373284651809199168E-1;
constexpr double a86 = -1.53194377486244017527936158236E-2;
constexpr double a87 = 8.27378916381402288758473766002E-3;
constexpr double a91 = 6.24110958716075717114429577812E-1;
constexpr double a94 = -3.36089262944694129406857109825E0;
constexpr double a95 = -8.68219346841726006818189891453E-1;
constexpr double a96 = 2.75920996994467083049415600797E1;
constexpr double a97 = 2.01540675504778934086186788979E1;
constexpr double a98 = -4.34898841810699588477366255144E1;
constexpr double a101 = 4.77662536438264365890433908527E-1;
constexpr double a104 = -2.48811461997166764192642586468E0;
constexpr double a105 = -5.90290826836842996371446475743E-1;
constexpr double a106 = 2.12300514481811942347288949897E1;
constexpr double a107 = 1.52792336328824235832596922938E1;
constexpr double a108 = -3.32882109689848629194453265587E1;
constexpr double a109 = -2.03312017085086261358222928593E-2;
constexpr double a111 = -9.3714243008598732571704021658E-1;
constexpr double a114 = 5.18637242884406370830023853209E0;
constexpr double a115 = 1.09143734899672957818500254654E0;
constexpr double a116 = -8.14978701074692612513997267357E0;
constexpr double a117 = -1.85200656599969598641566180701E1;
constexpr double a118 = 2.27394870993505042818970056734E1;
constexpr double a119 = 2.49360555267965238987089396762E0;
constexpr double a1110 = -3.0467644718982195003823669022E0;
constexpr double a121 = 2.27331014751653820792359768449E0;
constexpr double a124 = -1.05344954667372501984066689879E1;
constexpr double a125 = -2.00087205822486249909675718444E0;
constexpr double a126 = -1.79589318631187989172765950534E1;
constexpr double a127 = 2.79488845294199600508499808837E1;
constexpr double a128 = -2.85899827713502369474065508674E0;
constexpr double a129 = -8.87285693353062954433549289258E0;
constexpr double a1210 = 1.23605671757943030647266201528E1;
constexpr double a1211 = 6.43392746015763530355970484046E-1;

constexpr double a141 = 5.61675022830479523392909219681E-2;
constexpr double a147 = 2.53500210216624811088794765333E-1;
constexpr double a148 = -2.46239037470802489917441475441E-1;
constexpr double a149 = -1.24191423263816360469010140626E-1;
constexpr double a1410 = 1.5329179827876569731206322685E-1;
constexpr double a1411 = 8.20105229563468988491666602057E-3;
constexpr double a1412 = 7.56789766054569976138603589584E-3;
constexpr double a1413 = -8.298E-3;
constexpr double a151 = 3.18346481635021405060768473261E-2;
constexpr double a156 = 2.83009096723667755288322961402E-2;
constexpr double a157 = 5.35419883074385676223797384372E-2;
constexpr double a158 = -5.49237485713909884646569340306E-2;
constexpr double a1511 = -1.08347328697249322858509316994E-4;
constexpr double a1512 = 3.82571090835658412954920192323E-4;
constexpr double a1513 = -3.40465008687404560802977114492E-4;
constexpr double a1514 = 1.41312443674632500278074618366E-1;
constexpr double a161 = -4.28896301583791923408573538692E-1;
constexpr double a166 = -4.69762141536116384314449447206E0;
constexpr double a167 = 7.68342119606259904184240953878E0;
constexpr double a168 = 4.06898981839711007970213554331E0;
constexpr double a169 = 3.56727187455281109270669543021E-1;
constexpr double a1613 = -1.39902416515901462129418009734E-3;
constexpr double a1614 = 2.9475147891527723389556272149E0;
constexpr double a1615 = -9.15095847217987001081870187138E0;

constexpr double d41 = -0.84289382761090128651353491142E+01;
constexpr double d46 = 0.56671495351937776962531783590E+00;
constexpr double d47 = -0.30689499459498916912797304727E+01;
constexpr double d48 = 0.23846676565120698287728149680E+01;
constexpr double d49 = 0.21170345824450282767155149946E+01;
constexpr double d410 = -0.87139158377797299206789907490E+00;
constexpr double d411 = 0.22404374302607882758541771650E+01;
constexpr double d412 = 0.63157877876946881815570249290E+00;
constexpr double d413 = -0.88990336451333310820698117400E-01;
constexpr double d414 = 0.18148505520854727256656404962E+02;
constexpr double d415 = -0.91946323924783554000451984436E+01;
constexpr double d416 = -0.44360363875948939664310572000E+01;
constexpr double d51 = 0.10427508642579134603413151009E+02;
constexpr double d56 = 0.24228349177525818288430175319E+03;
constexpr double d57 = 0.16520045171727028198505394887E+03;
constexpr double d58 = -0.37454675472269020279518312152E+03;
constexpr double d59 = -0.22113666853125306036270938578E+02;
constexpr double d510 = 0.77334326684722638389603898808E+01;
constexpr double d511 = -0.30674084731089398182061213626E+02;
constexpr double d512 = -0.93321305264302278729567221706E+01;
constexpr double d513 = 0.15697238121770843886131091075E+02;
constexpr double d514 = -0.31139403219565177677282850411E+02;
constexpr double d515 = -0.93529243588444783865713862664E+01;
constexpr double d516 = 0.35816841486394083752465898540E+02;
constexpr double d61 = 0.19985053242002433820987653617E+02;
constexpr double d66 = -0.38703730874935176555105901742E+03;
constexpr double d67 = -0.18917813819516756882830838328E+03;
constexpr double d68 = 0.52780815920542364900561016686E+03;
constexpr double d69 = -0.11573902539959630126141871134E+02;
constexpr double d610 = 0.68812326946963000169666922661E+01;
constexpr double d611 = -0.10006050966910838403183860980E+01;
constexpr double d612 = 0.77771377980534432092869265740E+00;
constexpr double d613 = -0.27782057523535084065932004339E+01;
constexpr double d614 = -0.60196695231264120758267380846E+02;
constexpr double d615 = 0.84320405506677161018159903784E+02;
constexpr double d616 = 0.11992291136182789328035130030E+02;
constexpr double d71 = -0.25693933462703749003312586129E+02;
constexpr double d76 = -0.15418974869023643374053993627E+03;
constexpr double d77 = -0.23152937917604549567536039109E+03;
constexpr double d78 = 0.35763911791061412378285349910E+03;
constexpr double d79 = 0.93405324183624310003907691704E+02;
constexpr double d710 = -0.37458323136451633156875139351E+02;
constexpr double d711 = 0.10409964950896230045147246184E+03;
constexpr double d712 = 0.29840293426660503123344363579E+02;
constexpr double d713 = -0.43533456590011143754432175058E+02;
constexpr double d714 = 0.96324553959188282948394950600E+02;
constexpr double d715 = -0.39177261675615439165231486172E+02;
constexpr double d716 = -0.14972683625798562581422125276E+03;
}  // namespace c

constexpr double kRound = 2.3e-16;

}  // namespace

double Trajectory::accumulator(const std::string& name) const {
  for (std::size_t k = 0; k < names_.size(); ++k)
    if (names_[k] == name) return accumulator(k);
  throw Error("unknown-accumulator", name);
}

std::size_t Trajectory::locate(double t) const {
  // segments_ are ordered in the integration direction
  const bool forward = segments_.empty() || segments_.front().h > 0;
  auto before = [forward](const Segment& s, double x) {
    return forward ? s.t_start <= x : s.t_start >= x;
  };
  std::size_t lo = 0, hi = segments_.size();
  while (hi - lo > 1) {
    std::size_t mid = (lo + hi) / 2;
    if (before(segments_[mid], t))
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

Vec Trajectory::eval_full(double t) const {
  if (segments_.empty()) return nodes_.front();
  const Segment& seg = segments_[locate(t)];
  const double s = (t - seg.t_start) / seg.h;
  const double s1 = 1.0 - s;
  const auto& r = seg.rc;
  return r[0] + s * (r[1] + s1 * (r[2] + s * (r[3] + s1 * (r[4] + s * (r[5] + s1 * (r[6] + s * r[7]))))));
}

Vec Trajectory::derivative(double t) const {
  if (segments_.empty()) return Vec::Zero(static_cast<Eigen::Index>(dim_));
  const Segment& seg = segments_[locate(t)];
  const double s = (t - seg.t_start) / seg.h;
  const double s1 = 1.0 - s;
  const auto& r = seg.rc;
  // Nested form evaluated inside out, carrying d/ds alongside the value.
  Vec v = r[7], dv = Vec::Zero(r[7].size());
  auto mul_s = [&](const Vec& c) { dv = v + s * dv; v = c + s * v; };
  auto mul_s1 = [&](const Vec& c) { dv = -v + s1 * dv; v = c + s1 * v; };
  mul_s(r[6]);
  mul_s1(r[5]);
  mul_s(r[4]);
  mul_s1(r[3]);
  mul_s(r[2]);
  mul_s1(r[1]);
  mul_s(r[0]);
  return dv.head(static_cast<Eigen::Index>(dim_)) / seg.h;
}

class Dop853 {
 public:
  Dop853(const Field& rhs, std::size_t dim, std::span<const Accumulator> acc, const OdeOptions& opt)
      : rhs_(rhs), acc_(acc), opt_(opt), dim_(dim), n_(dim + acc.size()) {
    for (auto* v : {&k1, &k2, &k3, &k4, &k5, &k6, &k7, &k8, &k9, &k10, &y1, &ynew, &scratch})
      v->resize(static_cast<Eigen::Index>(n_));
    state_.resize(static_cast<Eigen::Index>(dim_));
    dstate_.resize(static_cast<Eigen::Index>(dim_));
  }

  Trajectory run(const Vec& y0, double t0, double t1, std::span<const EventSpec> events);

 private:
  void f(double t, const Vec& y, Vec& dy) {
    ++evaluations_;
    state_ = y.head(static_cast<Eigen::Index>(dim_));
    rhs_(t, state_, dstate_);
    dy.head(static_cast<Eigen::Index>(dim_)) = dstate_;
    for (std::size_t k = 0; k < acc_.size(); ++k)
      dy(static_cast<Eigen::Index>(dim_ + k)) = acc_[k].integrand(t, state_);
  }

  double initial_step(double t, const Vec& y, double hmax, double dir);
  void step(double t, const Vec& y, double h);
  double error_norm(const Vec& y, double h) const;
  void dense(double t, const Vec& y, double h, Trajectory::Segment& seg);

  const Field& rhs_;
  std::span<const Accumulator> acc_;
  OdeOptions opt_;
  std::size_t dim_;
  std::size_t n_;
  long evaluations_ = 0;
  Vec k1, k2, k3, k4, k5, k6, k7, k8, k9, k10, y1, ynew, scratch;
  Vec state_, dstate_;
};

double Dop853::initial_step(double t, const Vec& y, double hmax, double dir) {
  const Vec sk = (opt_.atol + opt_.rtol * y.array().abs()).matrix();
  const double dnf = (k1.array() / sk.array()).square().sum();
  const double dny = (y.array() / sk.array()).square().sum();
  double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
  h = std::min(h, hmax) * dir;
  y1 = y + h * k1;
  f(t + h, y1, k2);
  double der2 = std::sqrt(((k2 - k1).array() / sk.array()).square().sum()) / std::abs(h);
  const double der12 = std::max(std::abs(der2), std::sqrt(dnf));
  const double h1 = der12 <= 1e-15 ? std::max(1e-6, std::abs(h) * 1e-3) : std::pow(0.01 / der12, 0.125);
  return std::min({100.0 * std::abs(h), h1, hmax}) * dir;
}

void Dop853::step(double t, const Vec& y, double h) {
  using namespace c;
  y1 = y + h * a21 * k1;
  f(t + c2 * h, y1, k2);
  y1 = y + h * (a31 * k1 + a32 * k2);
  f(t + c3 * h, y1, k3);
  y1 = y + h * (a41 * k1 + a43 * k3);
  f(t + c4 * h, y1, k4);
  y1 = y + h * (a51 * k1 + a53 * k3 + a54 * k4);
  f(t + c5 * h, y1, k5);
  y1 = y + h * (a61 * k1 + a64 * k4 + a65 * k5);
  f(t + c6 * h, y1, k6);
  y1 = y + h * (a71 * k1 + a74 * k4 + a75 * k5 + a76 * k6);
  f(t + c7 * h, y1, k7);
  y1 = y + h * (a81 * k1 + a84 * k4 + a85 * k5 + a86 * k6 + a87 * k7);
  f(t + c8 * h, y1, k8);
  y1 = y + h * (a91 * k1 + a94 * k4 + a95 * k5 + a96 * k6 + a97 * k7 + a98 * k8);
  f(t + c9 * h, y1, k9);
  y1 = y + h * (a101 * k1 + a104 * k4 + a105 * k5 + a106 * k6 + a107 * k7 + a108 * k8 + a109 * k9);
  f(t + c10 * h, y1, k10);
  y1 = y + h * (a111 * k1 + a114 * k4 + a115 * k5 + a116 * k6 + a117 * k7 + a118 * k8 + a119 * k9 +
                a1110 * k10);
  f(t + c11 * h, y1, k2);  // k11
  y1 = y + h * (a121 * k1 + a124 * k4 + a125 * k5 + a126 * k6 + a127 * k7 + a128 * k8 + a129 * k9 +
                a1210 * k10 + a1211 * k2);
  f(t + h, y1, k3);  // k12
  k4 = b1 * k1 + b6 * k6 + b7 * k7 + b8 * k8 + b9 * k9 + b10 * k10 + b11 * k2 + b12 * k3;
  ynew = y + h * k4;
}

double Dop853::error_norm(const Vec& y, double h) const {
  using namespace c;
  double err = 0.0, err2 = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double sk = 1.0 / (opt_.atol + opt_.rtol * std::max(std::abs(y(i)), std::abs(ynew(i))));
    double e = (k4(i) - bhh1 * k1(i) - bhh2 * k9(i) - bhh3 * k3(i)) * sk;
    err2 += e * e;
    e = (er1 * k1(i) + er6 * k6(i) + er7 * k7(i) + er8 * k8(i) + er9 * k9(i) + er10 * k10(i) +
         er11 * k2(i) + er12 * k3(i)) *
        sk;
    err += e * e;
  }
  double deno = err + 0.01 * err2;
  const double n = static_cast<double>(y.size());
  return std::abs(h) * err * std::sqrt(1.0 / (deno <= 0.0 ? n : deno * n));
}

// Requires: k4 holds f(t+h, ynew); k2/k3 hold stages 11/12.
void Dop853::dense(double t, const Vec& y, double h, Trajectory::Segment& seg) {
  using namespace c;
  auto& rc = seg.rc;
  rc[0] = y;
  rc[1] = ynew - y;
  rc[2] = h * k1 - rc[1];
  rc[3] = rc[1] - h * k4 - rc[2];
  rc[4] = d41 * k1 + d46 * k6 + d47 * k7 + d48 * k8 + d49 * k9 + d410 * k10 + d411 * k2 + d412 * k3;
  rc[5] = d51 * k1 + d56 * k6 + d57 * k7 + d58 * k8 + d59 * k9 + d510 * k10 + d511 * k2 + d512 * k3;
  rc[6] = d61 * k1 + d66 * k6 + d67 * k7 + d68 * k8 + d69 * k9 + d610 * k10 + d611 * k2 + d612 * k3;
  rc[7] = d71 * k1 + d76 * k6 + d77 * k7 + d78 * k8 + d79 * k9 + d710 * k10 + d711 * k2 + d712 * k3;

  y1 = y + h * (a141 * k1 + a147 * k7 + a148 * k8 + a149 * k9 + a1410 * k10 + a1411 * k2 +
                a1412 * k3 + a1413 * k4);
  f(t + c14 * h, y1, k10);  // k14
  y1 = y + h * (a151 * k1 + a156 * k6 + a157 * k7 + a158 * k8 + a1511 * k2 + a1512 * k3 +
                a1513 * k4 + a1514 * k10);
  f(t + c15 * h, y1, scratch);  // k15
  k2 = scratch;
  y1 = y + h * (a161 * k1 + a166 * k6 + a167 * k7 + a168 * k8 + a169 * k9 + a1613 * k4 +
                a1614 * k10 + a1615 * k2);
  f(t + c16 * h, y1, k3);  // k16

  rc[4] = h * (rc[4] + d413 * k4 + d414 * k10 + d415 * k2 + d416 * k3);
  rc[5] = h * (rc[5] + d513 * k4 + d514 * k10 + d515 * k2 + d516 * k3);
  rc[6] = h * (rc[6] + d613 * k4 + d614 * k10 + d615 * k2 + d616 * k3);
  rc[7] = h * (rc[7] + d713 * k4 + d714 * k10 + d715 * k2 + d716 * k3);
}

namespace {

bool crossed(double before, double after, Direction dir) {
  switch (dir) {
    case Direction::Rising:
      return before < 0.0 && after >= 0.0;
    case Direction::Falling:
      return before > 0.0 && after <= 0.0;
    case Direction::Any:
      break;
  }
  return (before < 0.0 && after >= 0.0) || (before > 0.0 && after <= 0.0);
}

// Illinois-modified regula falsi with bisection fallback on [a, b].
template <class G>
double locate_root(G&& g, double a, double b, double ga, double gb, double tol) {
  if (std::abs(gb) <= tol) return b;
  int side = 0;
  for (int it = 0; it < 200; ++it) {
    double x = (a * gb - b * ga) / (gb - ga);
    const double lo = std::min(a, b), hi = std::max(a, b);
    if (!(x > lo && x < hi)) x = 0.5 * (a + b);
    const double gx = g(x);
    if (std::abs(gx) <= tol) return x;
    if ((gx > 0) == (gb > 0)) {
      b = x;
      gb = gx;
      if (side == -1) ga *= 0.5;
      side = -1;
    } else {
      a = x;
      ga = gx;
      if (side == 1) gb *= 0.5;
      side = 1;
    }
    if (std::abs(b - a) <= 4.0 * kRound * std::max(std::abs(a), std::abs(b))) break;
  }
  return std::abs(ga) < std::abs(gb) ? a : b;
}

}  // namespace

Trajectory Dop853::run(const Vec& y0, double t0, double t1, std::span<const EventSpec> events) {
  Trajectory traj;
  traj.dim_ = dim_;
  for (const auto& a : acc_) traj.names_.push_back(a.name);

  Vec y(static_cast<Eigen::Index>(n_));
  y.head(static_cast<Eigen::Index>(dim_)) = y0;
  for (std::size_t k = 0; k < acc_.size(); ++k) y(static_cast<Eigen::Index>(dim_ + k)) = acc_[k].initial;
  traj.times_.push_back(t0);
  traj.nodes_.push_back(y);
  if (t1 == t0) return traj;

  const double dir = t1 > t0 ? 1.0 : -1.0;
  const double hmax = std::min(opt_.h_max, std::abs(t1 - t0));
  double t = t0;
  f(t, y, k1);
  double h = opt_.h_init > 0 ? std::min(opt_.h_init, hmax) * dir : initial_step(t, y, hmax, dir);

  std::vector<double> g_prev(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) g_prev[e] = events[e].function(t, y0);
  bool first = true;

  bool last = false, reject = false;
  double facold = 1e-4;
  long steps = 0;
  while (true) {
    if (++steps > opt_.max_steps) throw Error("max-steps", "integration exceeded step budget");
    if (0.1 * std::abs(h) <= std::abs(t) * kRound || std::abs(h) < 1e-300)
      throw Error("stiff-or-singular", "step size underflow at t=" + std::to_string(t));
    if ((t + 1.01 * h - t1) * dir > 0.0) {
      h = t1 - t;
      last = true;
    }
    step(t, y, h);
    double err = error_norm(y, h);
    if (!std::isfinite(err) || !ynew.allFinite()) {
      h *= 0.2;
      reject = true;
      last = false;
      ++traj.rejected_;
      continue;
    }
    const double fac11 = std::pow(err, 0.125);
    double fac = std::max(1.0 / 6.0, std::min(3.0, fac11 / 0.9));
    double hnew = h / fac;
    if (err > 1.0) {
      hnew = h / std::min(3.0, fac11 / 0.9);
      reject = true;
      last = false;
      ++traj.rejected_;
      h = hnew;
      continue;
    }

    facold = std::max(err, 1e-4);
    (void)facold;
    f(t + h, ynew, k4);
    Trajectory::Segment seg;
    seg.t_start = t;
    seg.h = h;
    dense(t, y, h, seg);
    ++traj.accepted_;
    traj.segments_.push_back(std::move(seg));
    const double tnew = t + h;
    traj.times_.push_back(tnew);
    traj.nodes_.push_back(ynew);

    // event detection on the accepted step
    if (!events.empty()) {
      const Vec state_new = ynew.head(static_cast<Eigen::Index>(dim_));
      double best_t = 0.0;
      std::size_t best_e = events.size();
      for (std::size_t e = 0; e < events.size(); ++e) {
        const auto& ev = events[e];
        double a0 = t;
        double before = g_prev[e];
        if (first && ev.skip_initial && std::abs(before) <= ev.tolerance) {
          // step off the section before testing for a sign change
          a0 = t + 1e-3 * h;
          before = ev.function(a0, traj(a0));
        }
        const double after = ev.function(tnew, state_new);
        g_prev[e] = after;
        if (!crossed(before, after, ev.direction)) continue;
        auto g = [&](double s) { return ev.function(s, traj(s)); };
        const double ts = locate_root(g, a0, tnew, before, after, ev.tolerance);
        if (best_e == events.size() || (ts - best_t) * dir < 0) {
          best_t = ts;
          best_e = e;
        }
      }
      if (best_e != events.size()) {
        Vec yfull = traj.eval_full(best_t);
        traj.times_.back() = best_t;
        traj.nodes_.back() = yfull;
        traj.event_ = EventHit{best_e, best_t, yfull.head(static_cast<Eigen::Index>(dim_))};
        break;
      }
    }
    first = false;

    k1 = k4;
    y = ynew;
    t = tnew;
    if (last) break;
    if (std::abs(hnew) > hmax) hnew = dir * hmax;
    if (reject) hnew = dir * std::min(std::abs(hnew), std::abs(h));
    reject = false;
    h = hnew;
  }
  traj.evaluations_ = evaluations_;
  return traj;
}

Trajectory integrate(const Field& rhs, const Vec& y0, double t0, double t1,
                     std::span<const EventSpec> events, std::span<const Accumulator> accumulators,
                     const OdeOptions& options) {
  if (!y0.allFinite()) throw Error("non-finite-state", "initial state");
  Dop853 solver(rhs, static_cast<std::size_t>(y0.size()), accumulators, options);
  return solver.run(y0, t0, t1, events);
}

Vec flow(const Field& rhs, const Vec& y0, double t0, double t1, const OdeOptions& options) {
  return integrate(rhs, y0, t0, t1, {}, {}, options).final_state();
}

}  // namespace nlm::num
