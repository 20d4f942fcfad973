#include <math.h>
#include <stdio.h>
#include <string.h>

#include "glsim.h"

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond,   \
                    glsim_last_error_message());                     \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    GlsimConfig cfg;
    CHECK(glsim_config_default(&cfg) == GLSIM_STATUS_OK);
    CHECK(cfg.modes == 32 && cfg.alpha == 1.8);

    GlsimSimulator *sim = NULL;
    CHECK(glsim_simulator_new(&cfg, NULL, NULL, 0, &sim) == GLSIM_STATUS_OK);
    CHECK(glsim_simulator_step(sim, 100) == GLSIM_STATUS_OK);
    double t = 0.0;
    CHECK(glsim_simulator_time(sim, &t) == GLSIM_STATUS_OK);
    CHECK(fabs(t - 0.1) < 1e-12);
    GlsimNorms n;
    CHECK(glsim_simulator_norms(sim, &n) == GLSIM_STATUS_OK);
    CHECK(n.h > 0.0 && isfinite(n.hdelta));
    double c[32], s[32];
    CHECK(glsim_simulator_state(sim, c, s, 32) == GLSIM_STATUS_OK);
    CHECK(glsim_simulator_state(sim, c, s, 4) == GLSIM_STATUS_INVALID_PARAMETER);
    glsim_simulator_free(sim);

    CHECK(glsim_check_admissible(1.8, 1.2) == GLSIM_STATUS_INVALID_PARAMETER);
    CHECK(strstr(glsim_last_error_message(), "beta") != NULL);

    double g = 0.0;
    CHECK(glsim_riccati_explicit(0.0, 1.0, 30.0, 1.0, &g) == GLSIM_STATUS_OK);
    CHECK(fabs(g - tanh(1.0)) < 1e-15);
    CHECK(glsim_simulator_step(NULL, 1) == GLSIM_STATUS_NULL_POINTER);
    printf("ok %s\n", glsim_version());
    return 0;
}
