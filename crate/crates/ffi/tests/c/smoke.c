#include <math.h>
#include <stdio.h>
#include "decohist.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *msg = dh_last_error_message();                           \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, msg ? msg : ""); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  DhState *a = NULL, *b = NULL, *psi = NULL;
  CHECK(dh_state_gaussian_product(8, 2.0, 0.8, 0.0, 2, &a) == DH_STATUS_OK);
  CHECK(dh_state_gaussian_product(8, 6.0, 0.8, 0.0, 2, &b) == DH_STATUS_OK);
  double ore = 1.0, oim = 1.0;
  CHECK(dh_state_superpose(a, b, 0.6, 0.0, 0.8, 0.0, &ore, &oim, &psi) == DH_STATUS_OK);
  CHECK(dh_state_dim(psi) == 64);

  double mean = 0.0, var = 0.0, ratio = 0.0;
  CHECK(dh_number_peaking(a, 0, 4, &mean, &var, &ratio) == DH_STATUS_OK);
  CHECK(mean > 1.9 && ratio < 0.05);

  DhHamiltonian *h = NULL;
  CHECK(dh_hamiltonian_new(8, 2, NULL, 0, NULL, 0, &h) == DH_STATUS_OK);
  double edges[] = {-0.5, 0.5, 1.5, 2.5};
  double times[] = {0.5, 1.0};
  DhDecoherence *d = NULL;
  CHECK(dh_decoherence_number(psi, h, 0, 4, edges, 4, times, 2, &d) == DH_STATUS_OK);
  CHECK(dh_decoherence_len(d) == 9);
  double total = 0.0;
  for (size_t i = 0; i < 9; i++) {
    for (size_t j = 0; j < 9; j++) {
      double re, im;
      CHECK(dh_decoherence_get(d, i, j, &re, &im) == DH_STATUS_OK);
      total += re;
    }
  }
  CHECK(fabs(total - 1.0) < 1e-9);

  double bad_edges[] = {-0.5, 1.0, 2.5};
  DhDecoherence *bad = NULL;
  CHECK(dh_decoherence_number(psi, h, 0, 4, bad_edges, 3, times, 2, &bad) == DH_STATUS_HISTORY);
  CHECK(bad == NULL && dh_last_error_message() != NULL);

  double limit = -1.0;
  CHECK(dh_variance_ratio_limit(1, 1.0, DH_KERNEL_ZERO, 0.0, 0.1, 0.5, &limit) == DH_STATUS_OK);
  CHECK(fabs(limit) < 1e-12);

  dh_decoherence_free(d);
  dh_hamiltonian_free(h);
  dh_state_free(psi);
  dh_state_free(b);
  dh_state_free(a);
  printf("c smoke ok\n");
  return 0;
}
