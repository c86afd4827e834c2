package bank;

import java.util.List;

public class Account {
    private final String owner;
    private int balance;

    public Account(String owner) {
        this.owner = owner;
    }

    public int getBal() {
        return balance;
    }

    public void deposit(int amount) {
        balance += amount;
    }
}
