#include <doctest.h>

#include "ndae/ocp.hpp"

using namespace ndae;

namespace {

ContinuousModel two_state_model(int n_traj = 1) {
  ModelBuilder mb(2, 0, 0);
  mb.state(0, "a", 0.0);
  mb.state(1, "b");
  mb.horizon(0.0, 5.0);
  mb.dynamics({(-mb.x(0)).id, (mb.x(0) - mb.x(1)).id});
  for (int i = 0; i < n_traj; ++i) mb.trajectory(Eigen::VectorXd::Ones(2));
  return mb.build();
}

}  // namespace

TEST_CASE("build_model validates dimensions") {
  // dynamics count mismatch
  ModelBuilder bad(2, 0, 0);
  bad.horizon(0, 1);
  bad.dynamics({(-bad.x(0)).id});
  bad.trajectory(Eigen::VectorXd::Ones(2));
  CHECK_THROWS_AS(bad.build(), Error);

  // empty horizon
  ModelBuilder bad2(1, 0, 0);
  bad2.horizon(1.0, 1.0);
  bad2.dynamics({(-bad2.x(0)).id});
  CHECK_THROWS_AS(bad2.build(), Error);

  // duplicate names
  ModelBuilder bad3(2, 0, 0);
  bad3.state(0, "s").state(1, "s");
  bad3.horizon(0, 1);
  bad3.dynamics({(-bad3.x(0)).id, (-bad3.x(1)).id});
  CHECK_THROWS_AS(bad3.build(), Error);

  // wrong x0 size
  ModelBuilder bad4(2, 0, 0);
  bad4.horizon(0, 1);
  bad4.dynamics({(-bad4.x(0)).id, (-bad4.x(1)).id});
  bad4.trajectory(Eigen::VectorXd::Ones(3));
  CHECK_THROWS_AS(bad4.build(), Error);

  CHECK(two_state_model().n_x() == 2);
}

TEST_CASE("variable index mapping is the documented ordering") {
  ModelBuilder mb(2, 3, 1, 1);
  auto m_graphless = [&] {
    mb.horizon(0, 1);
    mb.dynamics({(-mb.x(0)).id, (-mb.x(1)).id});
    mb.trajectory(Eigen::VectorXd::Ones(2));
    return mb.build();
  }();
  CHECK(m_graphless.var_x(1) == 1);
  CHECK(m_graphless.var_y(0) == 2);
  CHECK(m_graphless.var_z(0) == 5);
  CHECK(m_graphless.var_p(0) == 6);
}

TEST_CASE("attach_observations validates and stores") {
  auto model = two_state_model();

  ObservationSet obs;
  TrajectoryObservations tr;
  tr.observed_states = {0};
  tr.times = {0.0, 2.5, 5.0};  // t = tf boundary case is valid
  tr.values = Eigen::MatrixXd::Ones(3, 1);
  obs.trajectories.push_back(tr);
  auto attached = attach_observations(model, obs);
  CHECK(attached.observations.trajectories.size() == 1);

  // time beyond tf
  ObservationSet bad = obs;
  bad.trajectories[0].times = {0.0, 2.5, 6.0};
  CHECK_THROWS_AS(attach_observations(two_state_model(), bad), Error);

  // state index out of range
  ObservationSet bad2 = obs;
  bad2.trajectories[0].observed_states = {7};
  CHECK_THROWS_AS(attach_observations(two_state_model(), bad2), Error);

  // trajectory count mismatch
  ObservationSet bad3 = obs;
  bad3.trajectories.push_back(tr);
  CHECK_THROWS_AS(attach_observations(two_state_model(), bad3), Error);
}
