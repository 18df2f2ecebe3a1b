#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "frea.h"

#define CHECK(expr)                                                         \
  do {                                                                      \
    FreaStatus st_ = (expr);                                                \
    if (st_ != FREA_STATUS_OK) {                                            \
      const char *m_ = frea_last_error_message();                           \
      fprintf(stderr, "%s failed: %d %s\n", #expr, st_, m_ ? m_ : "");      \
      return 1;                                                             \
    }                                                                       \
  } while (0)

int main(int argc, char **argv) {
  if (argc < 2) return 2;
  FreaModel *model = NULL;
  CHECK(frea_model_new_desk(11, &model));
  size_t size = frea_model_input_size(model);
  size_t n = size * size;
  double *mr = calloc(n, sizeof(double));
  double *a = calloc(n, sizeof(double));
  double *b = calloc(n, sizeof(double));
  for (size_t i = 0; i < n; i++) mr[i] = (double)((i * 7) % 255);

  CHECK(frea_model_predict(model, mr, size, 255.0, a));
  CHECK(frea_model_save(model, argv[1]));
  frea_model_free(model);

  FreaModel *loaded = NULL;
  CHECK(frea_model_load(argv[1], &loaded));
  CHECK(frea_model_predict(loaded, mr, size, 255.0, b));
  if (memcmp(a, b, n * sizeof(double)) != 0) {
    fprintf(stderr, "reloaded prediction differs\n");
    return 1;
  }
  for (size_t i = 0; i < n; i++) {
    if (!(a[i] >= 0.0 && a[i] <= 255.0)) {
      fprintf(stderr, "pixel %zu out of range: %g\n", i, a[i]);
      return 1;
    }
  }

  double *low = calloc(n, sizeof(double));
  double *high = calloc(n, sizeof(double));
  CHECK(frea_freq_split(mr, size, size, 3.0, 13, low, high));
  for (size_t i = 0; i < n; i++) {
    if (fabs(low[i] + high[i] - mr[i]) > 1e-9) return 1;
  }

  FreaMetrics m;
  CHECK(frea_metrics(mr, mr, size, size, 0.01, &m));
  if (m.mae != 0.0 || !isinf(m.psnr)) return 1;

  if (frea_model_load(NULL, &loaded) != FREA_STATUS_NULL_POINTER) return 1;
  if (frea_last_error_message() == NULL) return 1;

  frea_model_free(loaded);
  free(mr); free(a); free(b); free(low); free(high);
  printf("smoke ok %s\n", frea_version());
  return 0;
}
