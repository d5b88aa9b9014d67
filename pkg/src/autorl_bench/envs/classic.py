"""Classic-control tasks, vectorised over sub-environments.

Dynamics constants (all SI-free, per-task units as in the standard task
definitions):

=====================  ============================================================
task                   constants
=====================  ============================================================
cartpole               g=9.8, m_cart=1.0, m_pole=0.1, half-length=0.5, force=10,
                       dt=0.02 (explicit Euler), |x|>2.4 or |theta|>12 deg ends,
                       reward 1 per step, reset U(-0.05, 0.05)^4, 500 steps
mountaincar            force=0.001, gravity=0.0025, |v|<=0.07, x in [-1.2, 0.6],
                       goal x>=0.5 and v>=0, reward -1, reset x~U(-0.6,-0.4), 200 steps
mountaincar-continuous power=0.0015, gravity=0.0025, goal x>=0.45 and v>=0,
                       reward 100 on goal minus 0.1*a^2, 999 steps
acrobot                links l=1, m=1, com=0.5, moi=1, g=9.8, dt=0.2 (one RK4 step),
                       |dtheta1|<=4pi, |dtheta2|<=9pi, torques {-1,0,1},
                       reward -1 until -cos(t1)-cos(t1+t2)>1, reset U(-0.1,0.1)^4, 500 steps
pendulum               g=10, m=1, l=1, dt=0.05 (semi-implicit Euler), |thetadot|<=8,
                       |u|<=2, reward -(theta^2+0.1*thetadot^2+0.001*u^2),
                       reset theta~U(-pi,pi), thetadot~U(-1,1), 200 steps, never terminates
=====================  ============================================================
"""

from __future__ import annotations

import math

import numpy as np

from .base import VecEnv


class ClassicVecEnv(VecEnv):
    state_dim: int

    def _init_storage(self) -> None:
        self.s = np.zeros((self.n_envs, self.state_dim))

    def _physical_state(self):
        return {"s": self.s}

    def _load_physical_state(self, arrays):
        self.s = np.asarray(arrays["s"], dtype=np.float64)


class CartPole(ClassicVecEnv):
    state_dim = 4
    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    HALF_LENGTH = 0.5
    FORCE_MAG = 10.0
    TAU = 0.02
    THETA_LIMIT = 12 * 2 * math.pi / 360
    X_LIMIT = 2.4

    def _reset_one(self, i):
        self.s[i] = self.rngs[i].uniform(-0.05, 0.05, size=4)

    def _observe(self):
        return self.s.copy()

    def _advance(self, actions):
        x, x_dot, theta, theta_dot = self.s.T
        total_mass = self.MASS_POLE + self.MASS_CART
        pml = self.MASS_POLE * self.HALF_LENGTH
        force = np.where(actions == 1, self.FORCE_MAG, -self.FORCE_MAG)
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        temp = (force + pml * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.HALF_LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / total_mass)
        )
        x_acc = temp - pml * theta_acc * cos_t / total_mass
        x = x + self.TAU * x_dot
        x_dot = x_dot + self.TAU * x_acc
        theta = theta + self.TAU * theta_dot
        theta_dot = theta_dot + self.TAU * theta_acc
        self.s = np.stack([x, x_dot, theta, theta_dot], axis=1)
        terminated = (np.abs(x) > self.X_LIMIT) | (np.abs(theta) > self.THETA_LIMIT)
        return np.ones(self.n_envs), terminated


class MountainCar(ClassicVecEnv):
    state_dim = 2
    MIN_POS, MAX_POS, MAX_SPEED = -1.2, 0.6, 0.07
    GOAL_POS, GOAL_VEL = 0.5, 0.0
    FORCE, GRAVITY = 0.001, 0.0025

    def _reset_one(self, i):
        self.s[i] = (self.rngs[i].uniform(-0.6, -0.4), 0.0)

    def _observe(self):
        return self.s.copy()

    def _accel(self, actions):
        return (actions - 1) * self.FORCE

    def _move(self, accel):
        pos, vel = self.s.T
        vel = np.clip(vel + accel + np.cos(3 * pos) * (-self.GRAVITY), -self.MAX_SPEED, self.MAX_SPEED)
        pos = np.clip(pos + vel, self.MIN_POS, self.MAX_POS)
        vel = np.where((pos == self.MIN_POS) & (vel < 0), 0.0, vel)
        self.s = np.stack([pos, vel], axis=1)
        return (pos >= self.GOAL_POS) & (vel >= self.GOAL_VEL)

    def _advance(self, actions):
        terminated = self._move(self._accel(actions))
        return -np.ones(self.n_envs), terminated


class MountainCarContinuous(MountainCar):
    GOAL_POS = 0.45
    POWER = 0.0015

    def _advance(self, actions):
        force = np.clip(actions[:, 0], -1.0, 1.0)
        terminated = self._move(force * self.POWER)
        rewards = np.where(terminated, 100.0, 0.0) - 0.1 * actions[:, 0] ** 2
        return rewards, terminated


class Acrobot(ClassicVecEnv):
    state_dim = 4
    DT = 0.2
    L1 = 1.0
    M1 = M2 = 1.0
    LC1 = LC2 = 0.5
    MOI = 1.0
    G = 9.8
    MAX_VEL_1 = 4 * math.pi
    MAX_VEL_2 = 9 * math.pi
    TORQUES = np.array([-1.0, 0.0, 1.0])

    def _reset_one(self, i):
        self.s[i] = self.rngs[i].uniform(-0.1, 0.1, size=4)

    def _observe(self):
        t1, t2, d1, d2 = self.s.T
        return np.stack([np.cos(t1), np.sin(t1), np.cos(t2), np.sin(t2), d1, d2], axis=1)

    def _dsdt(self, s, a):
        m1, m2, l1, lc1, lc2, i1, i2, g = self.M1, self.M2, self.L1, self.LC1, self.LC2, self.MOI, self.MOI, self.G
        t1, t2, dt1, dt2 = s.T
        d1 = m1 * lc1**2 + m2 * (l1**2 + lc2**2 + 2 * l1 * lc2 * np.cos(t2)) + i1 + i2
        d2 = m2 * (lc2**2 + l1 * lc2 * np.cos(t2)) + i2
        phi2 = m2 * lc2 * g * np.cos(t1 + t2 - math.pi / 2.0)
        phi1 = (
            -m2 * l1 * lc2 * dt2**2 * np.sin(t2)
            - 2 * m2 * l1 * lc2 * dt2 * dt1 * np.sin(t2)
            + (m1 * lc1 + m2 * l1) * g * np.cos(t1 - math.pi / 2)
            + phi2
        )
        ddt2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dt1**2 * np.sin(t2) - phi2) / (
            m2 * lc2**2 + i2 - d2**2 / d1
        )
        ddt1 = -(d2 * ddt2 + phi1) / d1
        return np.stack([dt1, dt2, ddt1, ddt2], axis=1)

    def _advance(self, actions):
        torque = self.TORQUES[actions]
        s, h = self.s, self.DT
        k1 = self._dsdt(s, torque)
        k2 = self._dsdt(s + h / 2 * k1, torque)
        k3 = self._dsdt(s + h / 2 * k2, torque)
        k4 = self._dsdt(s + h * k3, torque)
        ns = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        ns[:, 0] = _wrap_angle(ns[:, 0])
        ns[:, 1] = _wrap_angle(ns[:, 1])
        ns[:, 2] = np.clip(ns[:, 2], -self.MAX_VEL_1, self.MAX_VEL_1)
        ns[:, 3] = np.clip(ns[:, 3], -self.MAX_VEL_2, self.MAX_VEL_2)
        self.s = ns
        terminated = -np.cos(ns[:, 0]) - np.cos(ns[:, 1] + ns[:, 0]) > 1.0
        return np.where(terminated, 0.0, -1.0), terminated


class Pendulum(ClassicVecEnv):
    state_dim = 2
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0
    DT = 0.05
    G = 10.0
    M = 1.0
    L = 1.0

    def _reset_one(self, i):
        rng = self.rngs[i]
        self.s[i] = (rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0))

    def _observe(self):
        th, thdot = self.s.T
        return np.stack([np.cos(th), np.sin(th), thdot], axis=1)

    def _advance(self, actions):
        th, thdot = self.s.T
        u = np.clip(actions[:, 0], -self.MAX_TORQUE, self.MAX_TORQUE)
        costs = _wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        new_thdot = thdot + (3 * self.G / (2 * self.L) * np.sin(th) + 3.0 / (self.M * self.L**2) * u) * self.DT
        new_thdot = np.clip(new_thdot, -self.MAX_SPEED, self.MAX_SPEED)
        new_th = th + new_thdot * self.DT
        self.s = np.stack([new_th, new_thdot], axis=1)
        return -costs, np.zeros(self.n_envs, dtype=bool)


def _wrap_angle(x):
    return ((x + math.pi) % (2 * math.pi)) - math.pi
